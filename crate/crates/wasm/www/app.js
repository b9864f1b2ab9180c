import init, { duopoly, share_curve, solve_market } from './pkg/bertrand_logit_wasm.js';

const DEFAULT_CONFIG = {
  schema_version: 1,
  theta: -0.5,
  products: [
    { id: 'basic', firm: 'north', value: 0.5, utility: { family: 'quadratic_price', alpha: 0.4 }, cost: { kind: 'constant', unit_cost: 1 } },
    { id: 'premium', firm: 'north', value: 1.5, utility: { family: 'quadratic_price', alpha: 0.4 }, cost: { kind: 'constant', unit_cost: 2 } },
    { id: 'value', firm: 'south', value: 0.2, utility: { family: 'log_price', alpha: 2.5 }, cost: { kind: 'constant', unit_cost: 0.8 } },
    { id: 'deluxe', firm: 'south', value: 1.0, utility: { family: 'cobb_douglas_price', alpha: 0.8, beta: 1.5 }, cost: { kind: 'constant', unit_cost: 1.5 } },
    { id: 'plain', firm: 'east', value: 0.0, utility: { family: 'linear', alpha: 1.2 }, cost: { kind: 'constant', unit_cost: 0.9 } },
  ],
};

const $ = (id) => document.getElementById(id);
const fmt = (x, d = 4) => Number(x).toFixed(d);

/** Axes, ticks and a mapping from data to canvas pixels. */
function frame(canvas, xr, yr, labels) {
  const ctx = canvas.getContext('2d');
  const pad = { l: 48, r: 14, t: 12, b: 36 };
  const w = canvas.width - pad.l - pad.r;
  const h = canvas.height - pad.t - pad.b;
  ctx.clearRect(0, 0, canvas.width, canvas.height);
  ctx.font = '11px system-ui, sans-serif';
  ctx.strokeStyle = '#999';
  ctx.fillStyle = '#444';
  ctx.strokeRect(pad.l, pad.t, w, h);
  const X = (x) => pad.l + ((x - xr[0]) / (xr[1] - xr[0])) * w;
  const Y = (y) => pad.t + h - ((y - yr[0]) / (yr[1] - yr[0])) * h;
  for (let i = 0; i <= 5; i++) {
    const x = xr[0] + ((xr[1] - xr[0]) * i) / 5;
    const y = yr[0] + ((yr[1] - yr[0]) * i) / 5;
    ctx.textAlign = 'center';
    ctx.fillText(x.toFixed(2), X(x), pad.t + h + 14);
    ctx.textAlign = 'right';
    ctx.fillText(y.toFixed(2), pad.l - 4, Y(y) + 4);
  }
  ctx.textAlign = 'center';
  ctx.fillText(labels[0], pad.l + w / 2, canvas.height - 4);
  ctx.save();
  ctx.translate(12, pad.t + h / 2);
  ctx.rotate(-Math.PI / 2);
  ctx.fillText(labels[1], 0, 0);
  ctx.restore();
  return { ctx, X, Y };
}

function polyline({ ctx, X, Y }, xs, ys, color) {
  ctx.strokeStyle = color;
  ctx.lineWidth = 2;
  ctx.beginPath();
  xs.forEach((x, i) => (i ? ctx.lineTo(X(x), Y(ys[i])) : ctx.moveTo(X(x), Y(ys[i]))));
  ctx.stroke();
  ctx.lineWidth = 1;
}

// 1. duopoly best responses

function drawDuopoly() {
  const params = {
    alpha: +$('duo-alpha').value,
    values: [+$('duo-va').value, +$('duo-vb').value],
    costs: [+$('duo-ca').value, +$('duo-cb').value],
  };
  const lo = 0.05;
  const hi = Math.max(...params.costs) + 4 / params.alpha;
  try {
    const out = JSON.parse(duopoly(JSON.stringify(params), lo, hi, 80));
    const all = out.response_a.concat(out.response_b, out.grid);
    const top = Math.max(...all);
    const f = frame($('duo-canvas'), [0, top], [0, top], ['price of A', 'price of B']);
    polyline(f, out.response_a, out.grid, '#1f77b4');
    polyline(f, out.grid, out.response_b, '#d62728');
    const [pa, pb] = out.equilibrium;
    f.ctx.fillStyle = '#000';
    f.ctx.beginPath();
    f.ctx.arc(f.X(pa), f.Y(pb), 4, 0, 2 * Math.PI);
    f.ctx.fill();
    $('duo-summary').textContent =
      `equilibrium: A ${fmt(pa)}, B ${fmt(pb)}; profits ${fmt(out.profits[0])} / ${fmt(out.profits[1])}`;
    $('duo-error').textContent = '';
  } catch (e) {
    $('duo-error').textContent = String(e.message ?? e);
  }
}

// 2. solve a config

let solved = null;

function solveConfig() {
  const text = $('config').value;
  try {
    const out = JSON.parse(solve_market(text));
    solved = { text, out };
    const rows = out.products
      .map((p) => `<tr><td>${p.id}</td><td>${p.firm}</td><td>${fmt(p.price)}</td><td>${fmt(p.share)}</td><td>${fmt(p.markup)}</td></tr>`)
      .join('');
    $('solve-table').innerHTML =
      '<tr><th>product</th><th>firm</th><th>price</th><th>share</th><th>markup</th></tr>' + rows;
    const profits = out.firms.map((f, i) => `${f} ${fmt(out.profits[i])}`).join(', ');
    const boundary = out.boundary_products.length ? `; priced out: ${out.boundary_products.join(', ')}` : '';
    $('solve-summary').textContent =
      `profits: ${profits}; outside share ${fmt(out.outside_share)}; ${out.iterations} iterations${boundary}`;
    $('solve-error').textContent = '';
    const select = $('curve-product');
    const keep = select.value;
    select.innerHTML = out.products.map((p) => `<option>${p.id}</option>`).join('');
    if (out.products.some((p) => p.id === keep)) select.value = keep;
    drawCurve();
  } catch (e) {
    solved = null;
    $('solve-table').innerHTML = '';
    $('solve-summary').textContent = '';
    $('solve-error').textContent = String(e.message ?? e);
  }
}

// 3. share and profit along one price

function drawCurve() {
  if (!solved) return;
  const product = $('curve-product').value;
  const hi = +$('curve-hi').value;
  try {
    const out = JSON.parse(share_curve(solved.text, product, 0.01, hi, 300));
    const maxProfit = Math.max(...out.profits) || 1;
    const maxShare = Math.max(...out.shares) || 1;
    const f = frame($('curve-canvas'), [0, out.prices[out.prices.length - 1]], [0, maxShare], [`price of ${product}`, 'share']);
    polyline(f, out.prices, out.shares, '#2ca02c');
    polyline(f, out.prices, out.profits.map((v) => (v / maxProfit) * maxShare), '#9467bd');
    f.ctx.strokeStyle = '#555';
    f.ctx.setLineDash([4, 4]);
    f.ctx.beginPath();
    f.ctx.moveTo(f.X(out.equilibrium_price), f.Y(0));
    f.ctx.lineTo(f.X(out.equilibrium_price), f.Y(maxShare));
    f.ctx.stroke();
    f.ctx.setLineDash([]);
    $('curve-error').textContent = '';
  } catch (e) {
    $('curve-error').textContent = String(e.message ?? e);
  }
}

function bindSlider(input, onChange) {
  const out = input.parentElement.querySelector('output');
  const show = () => {
    if (out) out.textContent = input.value;
  };
  show();
  input.addEventListener('input', () => {
    show();
    onChange();
  });
}

async function main() {
  await init();
  for (const id of ['duo-alpha', 'duo-va', 'duo-vb', 'duo-ca', 'duo-cb']) bindSlider($(id), drawDuopoly);
  bindSlider($('curve-hi'), drawCurve);
  $('curve-product').addEventListener('change', drawCurve);
  $('config').value = JSON.stringify(DEFAULT_CONFIG, null, 2);
  $('solve').addEventListener('click', solveConfig);
  drawDuopoly();
  solveConfig();
}

main();

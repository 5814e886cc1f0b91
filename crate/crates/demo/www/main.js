import init, { FilterDemo, classicGp, kernelProfile } from "./pkg/gpenkf_demo.js";

const $ = (id) => document.getElementById(id);

function linspace(lo, hi, n) {
  return Array.from({ length: n }, (_, i) => lo + (hi - lo) * i / (n - 1));
}

// Minimal line plot on a canvas; series are {x, y, color, dots?, fill?}.
function plot(canvas, series, xr, yr) {
  const ctx = canvas.getContext("2d");
  const w = canvas.width, h = canvas.height, pad = 30;
  const sx = (x) => pad + (x - xr[0]) / (xr[1] - xr[0]) * (w - 2 * pad);
  const sy = (y) => h - pad - (y - yr[0]) / (yr[1] - yr[0]) * (h - 2 * pad);
  ctx.clearRect(0, 0, w, h);
  ctx.strokeStyle = "#ddd";
  ctx.beginPath();
  ctx.moveTo(sx(xr[0]), sy(0)); ctx.lineTo(sx(xr[1]), sy(0));
  ctx.stroke();
  for (const s of series) {
    if (s.fill) {
      ctx.fillStyle = s.fill;
      ctx.beginPath();
      s.x.forEach((x, i) => ctx.lineTo(sx(x), sy(s.y[i] + s.band[i])));
      for (let i = s.x.length - 1; i >= 0; i--) ctx.lineTo(sx(s.x[i]), sy(s.y[i] - s.band[i]));
      ctx.fill();
    }
    ctx.strokeStyle = ctx.fillStyle = s.color;
    if (s.dots) {
      s.x.forEach((x, i) => ctx.fillRect(sx(x) - 2, sy(s.y[i]) - 2, 4, 4));
    } else {
      ctx.beginPath();
      s.x.forEach((x, i) => ctx.lineTo(sx(x), sy(s.y[i])));
      ctx.stroke();
    }
  }
  return { sx, sy, inv: (px, py) => [xr[0] + (px - pad) / (w - 2 * pad) * (xr[1] - xr[0]), yr[0] + (h - pad - py) / (h - 2 * pad) * (yr[1] - yr[0])] };
}

// filter run

let demo = null, timer = null;

function resetFilter() {
  clearInterval(timer); timer = null;
  $("run").textContent = "run";
  try {
    demo = new FilterDemo($("mode").value, +$("members").value, +$("grid").value, +$("seed").value, $("emean").checked);
    $("filter-status").textContent = "t = 0";
  } catch (e) {
    demo = null;
    $("filter-status").textContent = String(e);
  }
  drawFilter();
}

function drawFilter() {
  if (!demo) return;
  const xs = demo.testX(), truth = demo.truth();
  const series = [{ x: xs, y: truth, color: "#999" }];
  if (demo.t() > 0) {
    const p = demo.predict(), m = xs.length;
    const mean = Array.from(p.slice(0, m)), std = Array.from(p.slice(m)).map((s) => 2 * s);
    series.push({ x: xs, y: mean, band: std, fill: "rgba(40,100,220,.15)", color: "#2864dc" });
    const o = demo.observed();
    const ox = [], oy = [];
    for (let i = 0; i < o.length; i += 2) { ox.push(o[i]); oy.push(o[i + 1]); }
    series.push({ x: ox.slice(-50), y: oy.slice(-50), color: "#d33", dots: true });
  }
  plot($("filter-plot"), series, [-10, 10], [-15, 15]);
}

function tick() {
  try {
    const nmse = demo.step(1);
    const [v, l, n] = demo.params();
    $("filter-status").textContent =
      `t = ${demo.t()}  NMSE ${nmse.toFixed(3)}  variance ${v.toPrecision(3)}  lengthscale ${l.toPrecision(3)}  noise ${n.toPrecision(3)}`;
  } catch (e) {
    $("filter-status").textContent = String(e);
    clearInterval(timer); timer = null;
  }
  drawFilter();
  if (demo.t() >= demo.horizon()) { clearInterval(timer); timer = null; $("run").textContent = "run"; }
}

// classic GP

const pts = { x: [], y: [] };
const cq = linspace(-5, 5, 200);

function drawClassic() {
  const canvas = $("classic-plot");
  const series = [{ x: pts.x, y: pts.y, color: "#d33", dots: true }];
  if (pts.x.length > 0) {
    const fixed = $("fixed").checked ? [+$("var").value, +$("len").value, +$("noise").value] : [];
    try {
      const r = classicGp(new Float64Array(pts.x), new Float64Array(pts.y), new Float64Array(cq), new Float64Array(fixed));
      const m = cq.length;
      series.unshift({ x: cq, y: Array.from(r.slice(0, m)), band: Array.from(r.slice(m, 2 * m)).map((s) => 2 * s), fill: "rgba(40,160,90,.15)", color: "#289f5a" });
      const [v, l, n] = r.slice(2 * m);
      $("classic-status").textContent = `${pts.x.length} points  variance ${v.toPrecision(3)}  lengthscale ${l.toPrecision(3)}  noise ${n.toPrecision(3)}`;
    } catch (e) {
      $("classic-status").textContent = String(e);
    }
  } else {
    $("classic-status").textContent = "no points";
  }
  return plot(canvas, series, [-5, 5], [-3, 3]);
}

// kernel

function drawKernel() {
  const xs = linspace(-5, 5, 300);
  const v = +$("kvar").value, l = +$("klen").value;
  const k = kernelProfile(v, l, new Float64Array(xs));
  $("kernel-status").textContent = `k(0, x) with variance ${v} and lengthscale ${l}`;
  plot($("kernel-plot"), [{ x: xs, y: Array.from(k), color: "#8a2be2" }], [-5, 5], [-0.2, 4.2]);
}

await init();

$("reset").onclick = resetFilter;
$("run").onclick = () => {
  if (!demo) return;
  if (timer) { clearInterval(timer); timer = null; $("run").textContent = "run"; return; }
  timer = setInterval(tick, 30);
  $("run").textContent = "pause";
};
for (const id of ["mode", "members", "grid", "seed", "emean"]) $(id).onchange = resetFilter;

$("classic-plot").onclick = (ev) => {
  const c = ev.target, r = c.getBoundingClientRect();
  const view = drawClassic();
  const [x, y] = view.inv((ev.clientX - r.left) * c.width / r.width, (ev.clientY - r.top) * c.height / r.height);
  pts.x.push(x); pts.y.push(y);
  drawClassic();
};
$("clear").onclick = () => { pts.x.length = 0; pts.y.length = 0; drawClassic(); };
for (const id of ["fixed", "var", "len", "noise"]) $(id).onchange = drawClassic;

$("kvar").oninput = drawKernel;
$("klen").oninput = drawKernel;

resetFilter();
drawClassic();
drawKernel();

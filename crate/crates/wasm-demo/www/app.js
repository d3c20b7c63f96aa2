// Build with:
//   cargo build -p rbsvie-wasm-demo --target wasm32-unknown-unknown --release
//   wasm-bindgen --target web --out-dir www/pkg \
//     ../../target/wasm32-unknown-unknown/release/rbsvie_wasm_demo.wasm
import init, { solve_summary, stopping_frontier, time_inconsistency } from "./pkg/rbsvie_wasm_demo.js";

const $ = (id) => document.getElementById(id);
const out = $("out");

function inputs() {
  return [$("instance").value, $("params").value, Number($("steps").value)];
}

function plot(points, xLabel, yLabel) {
  const c = $("plot");
  const g = c.getContext("2d");
  g.clearRect(0, 0, c.width, c.height);
  if (points.length === 0) return;
  const xs = points.map((p) => p[0]);
  const ys = points.map((p) => p[1]);
  const [x0, x1] = [Math.min(...xs), Math.max(...xs)];
  let [y0, y1] = [Math.min(...ys), Math.max(...ys)];
  if (y1 === y0) { y0 -= 1; y1 += 1; }
  const pad = 30;
  const sx = (x) => pad + ((x - x0) / (x1 - x0 || 1)) * (c.width - 2 * pad);
  const sy = (y) => c.height - pad - ((y - y0) / (y1 - y0)) * (c.height - 2 * pad);
  g.fillStyle = "#2a6";
  for (const [x, y] of points) g.fillRect(sx(x) - 2, sy(y) - 2, 4, 4);
  g.fillStyle = "#333";
  g.fillText(`${xLabel} [${x0.toFixed(2)}, ${x1.toFixed(2)}]`, pad, c.height - 8);
  g.fillText(`${yLabel} [${y0.toPrecision(3)}, ${y1.toPrecision(3)}]`, 4, 14);
}

function guarded(f) {
  return () => {
    try {
      f();
    } catch (e) {
      out.textContent = `error: ${e}`;
    }
  };
}

await init();
out.textContent = "Ready.";

$("solve").onclick = guarded(() => {
  const r = JSON.parse(solve_summary(...inputs()));
  plot(r.diagonal.map((d) => [d.t, d.mean_y]), "t", "E[Y(t)]");
  out.textContent = `Y(0) = ${r.y0}\nPicard iterations: ${r.iterations}\nresiduals: ${r.residual_history.map((x) => x.toExponential(2)).join(", ")}`;
});

$("frontier").onclick = guarded(() => {
  const rows = JSON.parse(stopping_frontier(...inputs()));
  const anchor0 = rows.filter((r) => r.anchor_time === 0);
  plot(anchor0.map((r) => [r.time, r.critical_state_high]), "u", "highest stopping state, anchor 0");
  out.textContent = rows
    .slice(0, 40)
    .map((r) => `t=${r.anchor_time.toFixed(3)}  u=${r.time.toFixed(3)}  stop on [${r.critical_state_low.toFixed(4)}, ${r.critical_state_high.toFixed(4)}]`)
    .join("\n") + (rows.length > 40 ? `\n… ${rows.length - 40} more rows` : "");
});

$("inconsistency").onclick = guarded(() => {
  const r = JSON.parse(time_inconsistency(...inputs()));
  plot(r.anchors.map((a) => [a.anchor_time, a.gap]), "t", "J(τ*_t) − J(restarted τ*_0)");
  out.textContent = `time inconsistent: ${r.time_inconsistent}\nanchor-dependent frontier: ${r.anchor_dependent_frontier}\nmax gap: ${r.max_gap}\nmax |J(τ*) − E[Y]|: ${r.max_optimality_defect}`;
});

// Demo page wiring: loads the wasm module built by wasm-bindgen
// (`pkg/drspcrl_demo.js`) and renders the three interactive views with
// plain canvas code.

import init, {
  solve_dual_json,
  chain_robust_curve_json,
  curriculum_trace_json,
} from "./pkg/drspcrl_demo.js";

const COLORS = { blue: "#1f77b4", red: "#d62728", green: "#2ca02c", gray: "#888" };

function clearCanvas(canvas) {
  const ctx = canvas.getContext("2d");
  ctx.clearRect(0, 0, canvas.width, canvas.height);
  return ctx;
}

// Minimal line plot with axes; series = [{xs, ys, color, dash}].
function linePlot(canvas, series, opts = {}) {
  const ctx = clearCanvas(canvas);
  const W = canvas.width, H = canvas.height;
  const m = { l: 52, r: 14, t: 14, b: 34 };
  let xMin = Infinity, xMax = -Infinity, yMin = Infinity, yMax = -Infinity;
  for (const s of series) {
    for (const x of s.xs) { xMin = Math.min(xMin, x); xMax = Math.max(xMax, x); }
    for (const y of s.ys) { yMin = Math.min(yMin, y); yMax = Math.max(yMax, y); }
  }
  if (!isFinite(xMin)) return;
  if (xMax - xMin < 1e-12) xMax = xMin + 1;
  if (yMax - yMin < 1e-12) yMax = yMin + 1;
  const pad = 0.06 * (yMax - yMin);
  yMin -= pad; yMax += pad;
  const sx = x => m.l + (x - xMin) / (xMax - xMin) * (W - m.l - m.r);
  const sy = y => m.t + (1 - (y - yMin) / (yMax - yMin)) * (H - m.t - m.b);

  ctx.strokeStyle = "#ccc"; ctx.fillStyle = "#555"; ctx.font = "11px sans-serif";
  ctx.lineWidth = 1;
  for (let i = 0; i <= 4; i++) {
    const fy = yMin + (yMax - yMin) * i / 4;
    ctx.beginPath(); ctx.moveTo(m.l, sy(fy)); ctx.lineTo(W - m.r, sy(fy)); ctx.stroke();
    ctx.fillText(fy.toPrecision(3), 4, sy(fy) + 4);
    const fx = xMin + (xMax - xMin) * i / 4;
    ctx.fillText(fx.toPrecision(3), sx(fx) - 10, H - 14);
  }
  if (opts.xLabel) ctx.fillText(opts.xLabel, W / 2 - 20, H - 2);
  if (opts.logX) { /* x values arrive pre-transformed */ }

  for (const s of series) {
    ctx.strokeStyle = s.color || COLORS.blue;
    ctx.lineWidth = 2;
    ctx.setLineDash(s.dash || []);
    ctx.beginPath();
    s.xs.forEach((x, i) => {
      const px = sx(x), py = sy(s.ys[i]);
      if (i === 0) ctx.moveTo(px, py); else ctx.lineTo(px, py);
    });
    ctx.stroke();
    ctx.setLineDash([]);
  }
  for (const mk of opts.markers || []) {
    ctx.fillStyle = mk.color || COLORS.red;
    ctx.beginPath(); ctx.arc(sx(mk.x), sy(mk.y), 4, 0, Math.PI * 2); ctx.fill();
  }
  for (const vl of opts.vlines || []) {
    ctx.strokeStyle = vl.color || COLORS.gray;
    ctx.setLineDash([5, 4]);
    ctx.beginPath(); ctx.moveTo(sx(vl.x), m.t); ctx.lineTo(sx(vl.x), H - m.b); ctx.stroke();
    ctx.setLineDash([]);
    if (vl.label) { ctx.fillStyle = "#555"; ctx.fillText(vl.label, sx(vl.x) + 4, m.t + 12); }
  }
  for (const lg of opts.legend || []) {
    const y = m.t + 14 + (opts.legend.indexOf(lg)) * 16;
    ctx.fillStyle = lg.color; ctx.fillRect(m.l + 10, y - 8, 12, 3);
    ctx.fillStyle = "#333"; ctx.fillText(lg.label, m.l + 28, y - 2);
  }
}

function barPlot(canvas, nominal, worst) {
  const ctx = clearCanvas(canvas);
  const W = canvas.width, H = canvas.height;
  const m = { l: 40, r: 10, t: 24, b: 30 };
  const n = nominal.length;
  const band = (W - m.l - m.r) / n;
  const yMax = Math.max(...nominal, ...worst, 1e-9);
  const sy = v => m.t + (1 - v / yMax) * (H - m.t - m.b);
  ctx.font = "11px sans-serif";
  for (let i = 0; i < n; i++) {
    const x0 = m.l + i * band;
    ctx.fillStyle = COLORS.gray;
    ctx.fillRect(x0 + band * 0.12, sy(nominal[i]), band * 0.3, H - m.b - sy(nominal[i]));
    ctx.fillStyle = COLORS.red;
    ctx.fillRect(x0 + band * 0.5, sy(worst[i]), band * 0.3, H - m.b - sy(worst[i]));
    ctx.fillStyle = "#555";
    ctx.fillText(`v${i}`, x0 + band * 0.38, H - 14);
  }
  ctx.fillStyle = COLORS.gray; ctx.fillRect(m.l, 8, 12, 8);
  ctx.fillStyle = "#333"; ctx.fillText("nominal", m.l + 18, 15);
  ctx.fillStyle = COLORS.red; ctx.fillRect(m.l + 90, 8, 12, 8);
  ctx.fillStyle = "#333"; ctx.fillText("worst case", m.l + 108, 15);
}

function parseList(text) {
  return text.split(",").map(s => parseFloat(s.trim())).filter(x => !Number.isNaN(x));
}

function setupDual() {
  const values = document.getElementById("dual-values");
  const probs = document.getElementById("dual-probs");
  const eps = document.getElementById("dual-eps");
  const epsLabel = document.getElementById("dual-eps-label");
  const readout = document.getElementById("dual-readout");
  const error = document.getElementById("dual-error");

  const update = () => {
    epsLabel.textContent = Number(eps.value).toFixed(2);
    error.textContent = "";
    let out;
    try {
      out = JSON.parse(solve_dual_json(
        new Float64Array(parseList(values.value)),
        new Float64Array(parseList(probs.value)),
        Number(eps.value),
      ));
    } catch (e) {
      error.textContent = String(e);
      return;
    }
    if (out.curve_beta.length > 0) {
      const logBeta = out.curve_beta.map(Math.log10);
      linePlot(document.getElementById("dual-curve"),
        [{ xs: logBeta, ys: out.curve_objective, color: COLORS.blue }],
        {
          xLabel: "log10 beta",
          markers: out.beta_star > 0
            ? [{ x: Math.log10(out.beta_star), y: out.robust_value, color: COLORS.red }]
            : [],
        });
    } else {
      clearCanvas(document.getElementById("dual-curve"));
    }
    barPlot(document.getElementById("dual-bars"),
      parseList(probs.value), out.worst_case_probs);
    readout.innerHTML =
      `robust value <b>${out.robust_value.toFixed(4)}</b> &nbsp; ` +
      `nominal <b>${out.nominal_value.toFixed(4)}</b> &nbsp; ` +
      `&beta;* <b>${out.beta_star.toPrecision(4)}</b>` +
      (out.at_boundary ? " (boundary)" : "") +
      ` &nbsp; point-mass threshold &epsilon; = <b>${out.point_mass_threshold.toFixed(3)}</b>`;
  };
  [values, probs, eps].forEach(el => el.addEventListener("input", update));
  update();
}

function setupCurve() {
  const slip = document.getElementById("curve-slip");
  const gamma = document.getElementById("curve-gamma");
  const slipLabel = document.getElementById("curve-slip-label");
  const gammaLabel = document.getElementById("curve-gamma-label");
  const readout = document.getElementById("curve-readout");
  const error = document.getElementById("curve-error");

  const update = () => {
    slipLabel.textContent = Number(slip.value).toFixed(2);
    gammaLabel.textContent = Number(gamma.value).toFixed(2);
    error.textContent = "";
    let out;
    try {
      out = JSON.parse(chain_robust_curve_json(Number(slip.value), Number(gamma.value), 1.2, 61));
    } catch (e) {
      error.textContent = String(e);
      return;
    }
    const vlines = out.switch_epsilon !== null
      ? [{ x: out.switch_epsilon, label: "policy flips", color: COLORS.gray }]
      : [];
    linePlot(document.getElementById("curve-plot"), [
      { xs: out.epsilons, ys: out.start_values, color: COLORS.blue },
      { xs: out.epsilons, ys: out.shortcut_q, color: COLORS.red, dash: [4, 3] },
      { xs: out.epsilons, ys: out.detour_q, color: COLORS.green, dash: [4, 3] },
    ], {
      xLabel: "budget",
      vlines,
      legend: [
        { label: "start-state robust value", color: COLORS.blue },
        { label: "fork Q: shortcut", color: COLORS.red },
        { label: "fork Q: detour", color: COLORS.green },
      ],
    });
    readout.innerHTML = out.switch_epsilon !== null
      ? `optimal fork action flips to the detour at &epsilon; &asymp; <b>${out.switch_epsilon.toFixed(3)}</b>`
      : "the shortcut stays optimal over this budget range";
  };
  [slip, gamma].forEach(el => el.addEventListener("input", update));
  update();
}

function setupTrain() {
  const scheduler = document.getElementById("train-scheduler");
  const alpha = document.getElementById("train-alpha");
  const lambda = document.getElementById("train-lambda");
  const seed = document.getElementById("train-seed");
  const button = document.getElementById("train-run");
  const readout = document.getElementById("train-readout");
  const error = document.getElementById("train-error");
  const labels = {
    alpha: document.getElementById("train-alpha-label"),
    lambda: document.getElementById("train-lambda-label"),
    seed: document.getElementById("train-seed-label"),
  };
  const refresh = () => {
    labels.alpha.textContent = Number(alpha.value).toFixed(1);
    labels.lambda.textContent = Number(lambda.value).toFixed(3);
    labels.seed.textContent = seed.value;
  };
  [alpha, lambda, seed].forEach(el => el.addEventListener("input", refresh));
  refresh();

  button.addEventListener("click", () => {
    button.disabled = true;
    error.textContent = "";
    setTimeout(() => {
      let out;
      try {
        out = JSON.parse(curriculum_trace_json(
          scheduler.value, Number(alpha.value), Number(lambda.value), 300, BigInt(seed.value),
        ));
      } catch (e) {
        error.textContent = String(e);
        button.disabled = false;
        return;
      }
      const its = out.iterations.map(Number);
      linePlot(document.getElementById("train-eps"),
        [{ xs: its, ys: out.epsilon, color: COLORS.blue }],
        { xLabel: "iteration", legend: [{ label: "budget epsilon", color: COLORS.blue }] });
      linePlot(document.getElementById("train-beta"), [
        { xs: its, ys: out.beta_estimate, color: COLORS.red },
        { xs: its, ys: out.mean_return, color: COLORS.green },
      ], {
        xLabel: "iteration",
        legend: [
          { label: "mean dual variable", color: COLORS.red },
          { label: "episode return", color: COLORS.green },
        ],
      });
      const last = out.epsilon[out.epsilon.length - 1];
      readout.innerHTML =
        `final budget <b>${last.toFixed(3)}</b> &nbsp; ` +
        `final policy takes the <b>${out.final_fork_takes_detour ? "safe detour" : "risky shortcut"}</b> at the fork`;
      button.disabled = false;
    }, 10);
  });
}

init().then(() => {
  setupDual();
  setupCurve();
  setupTrain();
});

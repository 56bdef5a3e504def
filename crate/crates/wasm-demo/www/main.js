import init, { psd_view, compare_estimators, ber_point } from "./pkg/pnsim_wasm_demo.js";

const COLORS = ["#000", "#d62728", "#1f77b4", "#2ca02c", "#9467bd", "#ff7f0e"];
const $ = (id) => document.getElementById(id);
const num = (id) => Number($(id).value);

function link() {
  return {
    carrier_hz: num("carrier") * 1e9,
    n_fft: num("nfft"),
    n_active: num("nact"),
    mod_order: num("mod"),
    pattern: { type: "distributed", l: num("l") },
    snr_db: num("snr"),
    seed: num("seed"),
  };
}

// series: [{x, y, color, label}]
function plot(canvas, series, { logx = false, xlabel = "", ylabel = "" } = {}) {
  const ctx = canvas.getContext("2d");
  const w = canvas.width, h = canvas.height, pad = 45;
  ctx.clearRect(0, 0, w, h);
  const tx = logx ? Math.log10 : (v) => v;
  let [x0, x1, y0, y1] = [Infinity, -Infinity, Infinity, -Infinity];
  for (const s of series) {
    s.x.forEach((v, i) => {
      const y = s.y[i];
      if (!isFinite(y) || y < -250) return;
      x0 = Math.min(x0, tx(v)); x1 = Math.max(x1, tx(v));
      y0 = Math.min(y0, y); y1 = Math.max(y1, y);
    });
  }
  if (y1 === y0) { y0 -= 1; y1 += 1; }
  const px = (v) => pad + (tx(v) - x0) / (x1 - x0) * (w - 2 * pad);
  const py = (v) => h - pad + (y0 - v) / (y1 - y0) * (h - 2 * pad);

  ctx.strokeStyle = "#999";
  ctx.strokeRect(pad, pad, w - 2 * pad, h - 2 * pad);
  ctx.fillStyle = "#333";
  ctx.fillText(y1.toPrecision(3), 2, pad + 4);
  ctx.fillText(y0.toPrecision(3), 2, h - pad);
  ctx.fillText(logx ? `1e${x0.toFixed(1)}` : x0.toPrecision(3), pad, h - pad + 14);
  ctx.fillText(logx ? `1e${x1.toFixed(1)}` : x1.toPrecision(3), w - pad - 30, h - pad + 14);
  ctx.fillText(xlabel, w / 2 - 20, h - 8);
  ctx.fillText(ylabel, 2, 14);

  series.forEach((s, k) => {
    ctx.strokeStyle = s.color || COLORS[k % COLORS.length];
    ctx.beginPath();
    s.x.forEach((v, i) => (i ? ctx.lineTo : ctx.moveTo).call(ctx, px(v), py(s.y[i])));
    ctx.stroke();
    if (s.label) {
      ctx.fillStyle = ctx.strokeStyle;
      ctx.fillText(s.label, w - pad - 80, pad + 14 + 13 * k);
    }
  });
}

function guard(out, f) {
  try {
    out.classList.remove("err");
    f();
  } catch (e) {
    out.classList.add("err");
    out.textContent = String(e);
  }
}

function drawPsd() {
  guard($("psd-info"), () => {
    const v = JSON.parse(psd_view(JSON.stringify(link())));
    plot($("psd"), [{ x: v.freq_hz, y: v.psd_dbc_hz }], { logx: true, xlabel: "offset Hz", ylabel: "dBc/Hz" });
    plot($("trace"), [{ x: v.time_us, y: v.phase_rad }], { xlabel: "time us", ylabel: "phase rad" });
    $("psd-info").textContent = `rms phase over one symbol: ${v.phase_rms_rad.toFixed(4)} rad`;
  });
}

function drawCompare() {
  guard($("cmp-info"), () => {
    const v = JSON.parse(compare_estimators(JSON.stringify({ link: link() })));
    const k = v.truth_rad.map((_, i) => i);
    const series = [{ x: k, y: v.truth_rad, label: "true", color: COLORS[0] }];
    v.estimates.forEach((e, i) => series.push({ x: k, y: e.phase_rad, label: e.label, color: COLORS[i + 1] }));
    plot($("cmp"), series, { xlabel: "subcarrier", ylabel: "phase rad" });
    $("cmp-info").textContent = v.estimates.map((e) => `${e.label.padEnd(6)} mse ${e.mse.toExponential(3)}`).join("\n");
  });
}

function runBer() {
  $("ber-info").textContent = "running...";
  // let the status text paint before the blocking call
  setTimeout(() => guard($("ber-info"), () => {
    const req = { link: link(), estimator: { name: $("est").value }, frames: num("frames") };
    const t0 = performance.now();
    const m = JSON.parse(ber_point(JSON.stringify(req)));
    const dt = ((performance.now() - t0) / 1000).toFixed(2);
    $("ber-info").textContent =
      `BER ${m.ber.toExponential(3)}  (${m.bit_errors}/${m.n_bits} bits, ${m.n_frames} frames, ${dt}s)\n` +
      `SER ${m.ser.toExponential(3)}  EVM ${(100 * m.evm).toFixed(2)}%  phase MSE ${m.phase_mse.toExponential(3)}`;
  }), 10);
}

await init();
$("btn-psd").onclick = drawPsd;
$("btn-cmp").onclick = drawCompare;
$("btn-ber").onclick = runBer;
drawPsd();

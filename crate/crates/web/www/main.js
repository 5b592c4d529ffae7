import init, { analyze_voice, metrics_demo } from "./pkg/vocal_style_web.js";

const SECONDS = 2;
let lastSamples = null;

function values(fieldset) {
  const out = {};
  for (const el of fieldset.querySelectorAll("input")) out[el.name] = parseFloat(el.value);
  return out;
}

function drawVoice() {
  const v = values(document.getElementById("voice"));
  const out = document.getElementById("voice-out");
  let a;
  try {
    a = analyze_voice(v.f0, v.slope, v.vrate, v.vdepth, v.f1, v.f2, v.f3, v.jitter, SECONDS, 1n);
  } catch (e) {
    out.textContent = String(e);
    return;
  }
  const canvas = document.getElementById("spec");
  canvas.width = a.width;
  canvas.height = a.height;
  canvas.style.width = `${a.width * 3}px`;
  canvas.style.height = `${a.height * 2}px`;
  const img = new ImageData(new Uint8ClampedArray(a.rgba()), a.width, a.height);
  canvas.getContext("2d").putImageData(img, 0, 0);

  const est = a.estimated_f0();
  const prog = a.programmed_f0();
  const pc = document.getElementById("pitch");
  const ctx = pc.getContext("2d");
  ctx.clearRect(0, 0, pc.width, pc.height);
  const lo = 50, hi = 400;
  const y = (f) => pc.height - ((f - lo) / (hi - lo)) * pc.height;
  const x = (i) => (i / Math.max(1, est.length - 1)) * pc.width;
  ctx.strokeStyle = "#999";
  ctx.beginPath();
  prog.forEach((f, i) => (i ? ctx.lineTo(x(i), y(f)) : ctx.moveTo(x(i), y(f))));
  ctx.stroke();
  ctx.fillStyle = "#0077cc";
  est.forEach((f, i) => f > 0 && ctx.fillRect(x(i) - 1, y(f) - 1, 3, 3));

  const r = a.pearson_r;
  out.textContent = `F0 track vs programmed contour: r = ${Number.isNaN(r) ? "n/a" : r.toFixed(3)}`;
  lastSamples = a.samples();
  a.free();
}

function drawMetrics() {
  const v = values(document.getElementById("metrics"));
  let m;
  try {
    m = metrics_demo(v.da, v.db, v.rho, v.w1, v.w2, v.n, 7n);
  } catch (e) {
    document.getElementById("summary").textContent = String(e);
    return;
  }
  const c = document.getElementById("det");
  const ctx = c.getContext("2d");
  ctx.clearRect(0, 0, c.width, c.height);
  ctx.strokeStyle = "#ddd";
  ctx.beginPath();
  ctx.moveTo(0, c.height);
  ctx.lineTo(c.width, 0);
  ctx.stroke();
  const curve = (fmr, fnmr, color) => {
    ctx.strokeStyle = color;
    ctx.beginPath();
    fmr.forEach((f, i) => {
      const px = f * c.width, py = c.height - fnmr[i] * c.height;
      i ? ctx.lineTo(px, py) : ctx.moveTo(px, py);
    });
    ctx.stroke();
  };
  curve(m.fmr(), m.fnmr(), "#0077cc");
  curve(m.fused_fmr(), m.fused_fnmr(), "#cc3300");

  const s = m.summary();
  const rows = ["A", "B", "fused"].map((name, i) =>
    `<tr><th>${name}</th><td>${(100 * s[3 * i]).toFixed(2)}%</td>` +
    `<td>${(100 * s[3 * i + 1]).toFixed(2)}%</td><td>${s[3 * i + 2].toFixed(4)}</td></tr>`);
  document.getElementById("summary").innerHTML =
    "<tr><th></th><th>EER</th><th>TMR@FMR=1%</th><th>minDCF</th></tr>" + rows.join("");
  m.free();
}

function play() {
  if (!lastSamples) return;
  const ac = new AudioContext({ sampleRate: 8000 });
  const buf = ac.createBuffer(1, lastSamples.length, 8000);
  buf.copyToChannel(lastSamples, 0);
  const src = ac.createBufferSource();
  src.buffer = buf;
  src.connect(ac.destination);
  src.start();
}

await init();
document.getElementById("voice").addEventListener("input", drawVoice);
document.getElementById("metrics").addEventListener("input", drawMetrics);
document.getElementById("play").addEventListener("click", play);
drawVoice();
drawMetrics();

// Vanilla-JS front end for the weakseg wasm demo. Expects the wasm-bindgen
// bundle at ./pkg/ (see the README for the two build commands).

import init, { Demo } from "./pkg/weakseg_demo.js";

const $ = (id) => document.getElementById(id);
const canvas = $("canvas");
const ctx = canvas.getContext("2d");
const status = (msg) => { $("status").textContent = msg; };

let demo = null;
let positions = null;     // Float32Array, xyz interleaved
let baseColors = null;    // Uint8Array, rgb interleaved (current point colors)
let overlay = null;       // Int32Array | null: propagation classes (-2 anchor, -1 none)
let palette = null;       // Uint8Array rgb per class
let labels = null;        // Int32Array ground truth
let center = [0, 0, 0];
let rotX = -1.05, rotZ = 0.6, zoom = 1.0;
let trainedEpochs = 0;

function resize() {
  const rect = canvas.parentElement.getBoundingClientRect();
  canvas.width = rect.width * devicePixelRatio;
  canvas.height = rect.height * devicePixelRatio;
  draw();
}

function project() {
  // orthographic projection after Z then X rotation
  const n = positions.length / 3;
  const out = new Float32Array(n * 3);
  const cz = Math.cos(rotZ), sz = Math.sin(rotZ);
  const cx = Math.cos(rotX), sx = Math.sin(rotX);
  for (let i = 0; i < n; i++) {
    const x = positions[3 * i] - center[0];
    const y = positions[3 * i + 1] - center[1];
    const z = positions[3 * i + 2] - center[2];
    const x1 = x * cz - y * sz;
    const y1 = x * sz + y * cz;
    const y2 = y1 * cx - z * sx;
    const z2 = y1 * sx + z * cx;
    out[3 * i] = x1;
    out[3 * i + 1] = y2;
    out[3 * i + 2] = z2;
  }
  return out;
}

function draw() {
  if (!demo) return;
  ctx.fillStyle = "#101214";
  ctx.fillRect(0, 0, canvas.width, canvas.height);
  const proj = project();
  const n = proj.length / 3;
  // scale to fit
  let maxR = 1e-9;
  for (let i = 0; i < n; i++) {
    maxR = Math.max(maxR, Math.abs(proj[3 * i]), Math.abs(proj[3 * i + 1]));
  }
  const scale = (Math.min(canvas.width, canvas.height) * 0.46 * zoom) / maxR;
  const ox = canvas.width / 2, oy = canvas.height / 2;

  // painter's order: far to near
  const order = Array.from({ length: n }, (_, i) => i);
  order.sort((a, b) => proj[3 * a + 2] - proj[3 * b + 2]);

  const size = Math.max(1.5, 110 / Math.sqrt(n)) * devicePixelRatio * zoom;
  const anchors = [];
  for (const i of order) {
    let r, g, b;
    if (overlay) {
      const c = overlay[i];
      if (c === -2) { anchors.push(i); continue; }
      if (c >= 0) {
        r = palette[3 * c]; g = palette[3 * c + 1]; b = palette[3 * c + 2];
      } else {
        const v = 0.25 * (0.299 * baseColors[3 * i] + 0.587 * baseColors[3 * i + 1] + 0.114 * baseColors[3 * i + 2]);
        r = g = b = v;
      }
    } else {
      r = baseColors[3 * i]; g = baseColors[3 * i + 1]; b = baseColors[3 * i + 2];
    }
    ctx.fillStyle = `rgb(${r},${g},${b})`;
    ctx.fillRect(ox + proj[3 * i] * scale - size / 2, oy - proj[3 * i + 1] * scale - size / 2, size, size);
  }
  // anchors on top, ringed
  for (const i of anchors) {
    const x = ox + proj[3 * i] * scale, y = oy - proj[3 * i + 1] * scale;
    const c = labels[i];
    ctx.fillStyle = `rgb(${palette[3 * c]},${palette[3 * c + 1]},${palette[3 * c + 2]})`;
    ctx.strokeStyle = "#ffffff";
    ctx.lineWidth = 2 * devicePixelRatio;
    ctx.beginPath();
    ctx.arc(x, y, 5 * devicePixelRatio, 0, Math.PI * 2);
    ctx.fill();
    ctx.stroke();
  }
}

function legend(show) {
  const el = $("legend");
  if (!show || !palette) { el.hidden = true; return; }
  let html = "";
  for (let c = 0; c * 3 < palette.length; c++) {
    html += `<div><span class="swatch" style="background:rgb(${palette[3 * c]},${palette[3 * c + 1]},${palette[3 * c + 2]})"></span>class ${c}</div>`;
  }
  el.innerHTML = html;
  el.hidden = false;
}

function generate() {
  const n = +$("points").value, c = +$("classes").value;
  const extent = +$("extent").value, noise = +$("noise").value;
  const seed = BigInt($("seed").value);
  try {
    demo = new Demo(n, c, extent, noise, seed);
  } catch (e) {
    status(`generation failed: ${e}`);
    return;
  }
  positions = demo.positions();
  baseColors = demo.colors();
  palette = demo.palette();
  labels = demo.labels();
  overlay = null;
  trainedEpochs = 0;
  center = [0, 0, 0];
  const count = positions.length / 3;
  for (let i = 0; i < count; i++) {
    center[0] += positions[3 * i] / count;
    center[1] += positions[3 * i + 1] / count;
    center[2] += positions[3 * i + 2] / count;
  }
  $("prop").disabled = true;
  $("train").disabled = false;
  $("resetnet").disabled = false;
  $("showcolor").disabled = true;
  legend(false);
  applyViewMode();
  status(`scene: ${count} points, ${c} classes`);
}

function applyViewMode() {
  if (!demo) return;
  overlay = null;
  if ($("view-mode").value === "labels") {
    const cols = new Uint8Array(labels.length * 3);
    for (let i = 0; i < labels.length; i++) {
      const c = labels[i];
      cols[3 * i] = palette[3 * c];
      cols[3 * i + 1] = palette[3 * c + 1];
      cols[3 * i + 2] = palette[3 * c + 2];
    }
    baseColors = cols;
    legend(true);
  } else {
    baseColors = demo.colors();
    legend(false);
  }
  draw();
}

function sampleWeak() {
  if (!demo) return;
  const scheme = $("scheme").value;
  try {
    const anchors = demo.sample_weak(
      scheme,
      +$("fraction").value,
      +$("regions").value,
      +$("radius").value,
      BigInt($("wseed").value),
    );
    overlay = new Int32Array(positions.length / 3).fill(-1);
    for (const i of anchors) overlay[i] = -2;
    $("prop").disabled = false;
    legend(true);
    draw();
    status(`sampled ${anchors.length} annotated points (${scheme})`);
  } catch (e) {
    status(`weak labeling failed: ${e}`);
  }
}

function propagate() {
  if (!demo) return;
  const useEncoder = $("embedding").value === "encoder";
  try {
    const t = performance.now();
    const chosen = demo.propagate(+$("ktop").value, useEncoder);
    const ms = performance.now() - t;
    overlay = chosen;
    const acc = demo.propagation_accuracy(chosen);
    let masked = 0;
    for (const c of chosen) if (c >= 0) masked++;
    legend(true);
    draw();
    status(`propagated ${masked} pseudo labels in ${ms.toFixed(1)} ms\naccuracy vs ground truth: ${(acc * 100).toFixed(1)}%` +
      (useEncoder ? ` (encoder embeddings, ${trainedEpochs} epochs)` : " (raw feature embeddings)"));
  } catch (e) {
    status(`propagation failed: ${e}`);
  }
}

function train() {
  if (!demo) return;
  const epochs = +$("epochs").value;
  $("train").disabled = true;
  status(`training ${epochs} epochs…`);
  // yield a frame so the status paints before the synchronous training run
  requestAnimationFrame(() => setTimeout(() => {
    try {
      const t = performance.now();
      const loss = demo.pretext_train(epochs);
      trainedEpochs = demo.epochs_done();
      const secs = (performance.now() - t) / 1000;
      $("showcolor").disabled = false;
      status(`colorization: ${trainedEpochs} epochs, loss ${loss.toFixed(4)} (${secs.toFixed(1)} s)`);
      if ($("color-view").value === "predicted") showColorization();
    } catch (e) {
      status(`training failed: ${e}`);
    }
    $("train").disabled = false;
  }, 16));
}

function showColorization() {
  if (!demo) return;
  try {
    overlay = null;
    baseColors = $("color-view").value === "gray" ? demo.gray_input() : demo.colorized();
    legend(false);
    draw();
  } catch (e) {
    status(`${e}`);
  }
}

function wireSchemeRows() {
  const scheme = $("scheme").value;
  $("row-fraction").hidden = scheme !== "fraction";
  $("row-regions").hidden = scheme !== "spt";
  $("row-radius").hidden = scheme !== "spt";
}

// input events
$("generate").onclick = generate;
$("weak").onclick = sampleWeak;
$("prop").onclick = propagate;
$("train").onclick = train;
$("resetnet").onclick = () => {
  if (!demo) return;
  demo.pretext_reset(7n);
  trainedEpochs = 0;
  status("colorization network reset");
};
$("showcolor").onclick = showColorization;
$("view-mode").onchange = applyViewMode;
$("color-view").onchange = showColorization;
$("scheme").onchange = wireSchemeRows;
$("noise").oninput = () => { $("noiseval").textContent = (+$("noise").value).toFixed(2); };

let dragging = false, lastX = 0, lastY = 0;
canvas.addEventListener("pointerdown", (e) => { dragging = true; lastX = e.clientX; lastY = e.clientY; });
window.addEventListener("pointerup", () => { dragging = false; });
window.addEventListener("pointermove", (e) => {
  if (!dragging) return;
  rotZ += (e.clientX - lastX) * 0.008;
  rotX += (e.clientY - lastY) * 0.008;
  lastX = e.clientX; lastY = e.clientY;
  draw();
});
canvas.addEventListener("wheel", (e) => {
  e.preventDefault();
  zoom *= e.deltaY < 0 ? 1.1 : 0.9;
  zoom = Math.min(8, Math.max(0.2, zoom));
  draw();
}, { passive: false });
window.addEventListener("resize", resize);

init().then(() => {
  status("ready");
  wireSchemeRows();
  resize();
  generate();
});

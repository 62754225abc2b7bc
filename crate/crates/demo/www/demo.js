import init, { csf_curve, mask_weight_map, perceive_slice, demo_dims } from './pkg/hvsim_demo.js';

const $ = (id) => document.getElementById(id);

function drawGray(canvas, bytes, w, h) {
  const off = new OffscreenCanvas(w, h);
  const img = off.getContext('2d').createImageData(w, h);
  for (let i = 0; i < w * h; i++) {
    img.data.set([bytes[i], bytes[i], bytes[i], 255], 4 * i);
  }
  off.getContext('2d').putImageData(img, 0, 0);
  const ctx = canvas.getContext('2d');
  ctx.imageSmoothingEnabled = false;
  ctx.drawImage(off, 0, 0, canvas.width, canvas.height);
}

function drawCsf() {
  const v = 10 ** Number($('csf-v').value);
  $('csf-v-out').textContent = v.toFixed(2);
  const n = 240, rhoMax = 30;
  const s = csf_curve(v, rhoMax, n);
  const c = $('csf'), ctx = c.getContext('2d');
  ctx.clearRect(0, 0, c.width, c.height);
  // log-log axes: rho 0.125..30 cpd, sensitivity 1..1000
  const x = (rho) => (Math.log10(rho / 0.125) / Math.log10(rhoMax / 0.125)) * c.width;
  const y = (g) => c.height - (Math.log10(Math.max(g, 1)) / 3) * c.height;
  ctx.strokeStyle = '#eee';
  for (const g of [1, 10, 100, 1000]) { ctx.beginPath(); ctx.moveTo(0, y(g)); ctx.lineTo(c.width, y(g)); ctx.stroke(); }
  ctx.strokeStyle = '#036'; ctx.lineWidth = 2; ctx.beginPath();
  s.forEach((g, i) => {
    const rho = (rhoMax * (i + 1)) / n;
    if (rho < 0.125) return;
    ctx.lineTo(x(rho), y(g));
  });
  ctx.stroke();
}

function drawMask() {
  const n = 129;
  const w = mask_weight_map(Number($('mw-fx').value), Number($('mw-fy').value), 9, n, Number($('mw-alpha').value), 2.2);
  const max = Math.max(...w, 1e-12);
  drawGray($('mw'), w.map((x) => Math.round((255 * x) / max)), n, n);
}

function drawSlice() {
  const [nx, ny] = demo_dims();
  try {
    const bytes = perceive_slice(
      Number($('ps-level').value), Number($('ps-source').value), $('ps-lesion').checked,
      $('ps-method').value, $('ps-mask').checked, Number($('ps-slice').value),
    );
    drawGray($('ps-in'), bytes.subarray(0, nx * ny), nx, ny);
    drawGray($('ps-out'), bytes.subarray(nx * ny), nx, ny);
    $('ps-err').textContent = '';
  } catch (e) {
    $('ps-err').textContent = String(e.message || e);
  }
}

await init();
$('ps-slice').max = demo_dims()[2] - 1;
$('csf-v').oninput = drawCsf;
for (const id of ['mw-fx', 'mw-fy', 'mw-alpha']) $(id).oninput = drawMask;
for (const id of ['ps-level', 'ps-method', 'ps-mask', 'ps-lesion', 'ps-source', 'ps-slice']) $(id).onchange = drawSlice;
drawCsf();
drawMask();
drawSlice();

import init, { run_protocol, cosine_schedule, group_layout } from "./pkg/pki_demo.js";

const $ = (id) => document.getElementById(id);
const num = (id) => Number($(id).value);

function showError(el, e) {
  el.className = "err";
  el.textContent = String(e && e.message ? e.message : e);
}

function axes(ctx, w, h, pad, ymax, ylabel) {
  ctx.clearRect(0, 0, w, h);
  ctx.strokeStyle = "#999";
  ctx.beginPath();
  ctx.moveTo(pad, pad);
  ctx.lineTo(pad, h - pad);
  ctx.lineTo(w - pad, h - pad);
  ctx.stroke();
  ctx.fillStyle = "#444";
  ctx.font = "11px sans-serif";
  ctx.fillText(ylabel, 4, pad - 6);
  ctx.fillText(String(ymax), 4, pad + 4);
  ctx.fillText("0", pad - 12, h - pad + 4);
}

function line(ctx, ys, ymax, w, h, pad, color) {
  const dx = ys.length > 1 ? (w - 2 * pad) / (ys.length - 1) : 0;
  ctx.strokeStyle = color;
  ctx.fillStyle = color;
  ctx.lineWidth = 2;
  ctx.beginPath();
  ys.forEach((y, i) => {
    const px = pad + i * dx;
    const py = h - pad - (y / ymax) * (h - 2 * pad);
    i === 0 ? ctx.moveTo(px, py) : ctx.lineTo(px, py);
  });
  ctx.stroke();
  ctx.lineWidth = 1;
  return dx;
}

function runProtocol() {
  const info = $("acc-info");
  const canvas = $("acc");
  const ctx = canvas.getContext("2d");
  const params = {
    mode: $("mode").value,
    k: num("k"),
    alpha: num("alpha"),
    seed: num("seed"),
    cluster_std: num("std"),
    sessions: num("sessions"),
  };
  let res;
  try {
    res = JSON.parse(run_protocol(JSON.stringify(params)));
  } catch (e) {
    ctx.clearRect(0, 0, canvas.width, canvas.height);
    return showError(info, e);
  }
  const { width: w, height: h } = canvas;
  const pad = 30;
  axes(ctx, w, h, pad, 100, "accuracy %");
  const series = [
    [res.joint, "#1f77b4", "joint"],
    [res.base, "#ff7f0e", "base classes"],
    [res.ncm, "#2ca02c", "nearest class mean"],
  ];
  let dx = 0;
  series.forEach(([ys, color, name], i) => {
    dx = line(ctx, ys, 100, w, h, pad, color);
    ctx.fillText(name, w - 150, pad + 14 * i);
  });
  ctx.fillStyle = "#444";
  res.joint.forEach((_, i) => ctx.fillText(`s${i}`, pad + i * dx - 6, h - pad + 14));
  info.className = "";
  const fmt = (v) => v.map((x) => x.toFixed(1)).join(", ");
  info.textContent = `${res.label}: joint [${fmt(res.joint)}], weight sets stored after training ${res.stored_weight_sets}`;
}

function drawSchedule() {
  const canvas = $("lr");
  const ctx = canvas.getContext("2d");
  const { width: w, height: h } = canvas;
  let pts;
  try {
    pts = Array.from(cosine_schedule(num("lrmax"), num("lrmin"), num("steps"), 101));
  } catch (e) {
    ctx.clearRect(0, 0, w, h);
    ctx.fillStyle = "#b00";
    ctx.fillText(String(e.message || e), 40, 40);
    return;
  }
  const ymax = Math.max(...pts, 1e-12);
  axes(ctx, w, h, 30, ymax.toPrecision(3), "lr");
  line(ctx, pts, ymax, w, h, 30, "#d62728");
}

function drawGroups() {
  const info = $("groups-info");
  const canvas = $("groups");
  const ctx = canvas.getContext("2d");
  ctx.clearRect(0, 0, canvas.width, canvas.height);
  let layout;
  try {
    layout = JSON.parse(group_layout($("gmode").value, num("gk"), num("gt")));
  } catch (e) {
    return showError(info, e);
  }
  const sessions = layout.groups.flat().length;
  const cell = Math.min(40, (canvas.width - 20) / sessions);
  const palette = ["#aec7e8", "#ffbb78", "#98df8a", "#ff9896", "#c5b0d5", "#c49c94"];
  ctx.font = "11px sans-serif";
  let x = 10;
  layout.groups.forEach((g, gi) => {
    const last = gi === layout.groups.length - 1;
    ctx.fillStyle = palette[gi % palette.length];
    ctx.fillRect(x, 20, cell * g.length - 2, 40);
    ctx.strokeStyle = "#555";
    ctx.strokeRect(x, 20, cell * g.length - 2, 40);
    ctx.fillStyle = "#222";
    g.forEach((s, i) => ctx.fillText(String(s), x + i * cell + cell / 2 - 4, 44));
    if (last) ctx.fillText("trains", x, 76);
    x += cell * g.length;
  });
  info.className = "";
  info.textContent = `${layout.mode}: ${layout.groups.length} forward applications, ${layout.stored_weight_sets} weight sets stored`;
}

await init();
$("run").addEventListener("click", runProtocol);
["lrmax", "lrmin", "steps"].forEach((id) => $(id).addEventListener("input", drawSchedule));
["gmode", "gk", "gt"].forEach((id) => $(id).addEventListener("input", drawGroups));
drawSchedule();
drawGroups();
runProtocol();

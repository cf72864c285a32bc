import init, { analyze_pool, comparison_loss, discount_curve } from "./pkg/apdf_rank_demo.js";

const POOL = {
  question: "how do I reverse a vector in rust",
  candidates: [
    { text: "call reverse on the vector in rust, it works in place", votes: 12, age_days: 30 },
    { text: "use a loop and swap elements", votes: 3, age_days: 400 },
    { text: "iterate with rev and collect into a new vector", votes: 7, age_days: 90 },
    { text: "vectors cannot be reversed", votes: 0, age_days: 10 },
  ],
};

const $ = (id) => document.getElementById(id);
let scores = [];

function poolRequest() {
  const pool = JSON.parse($("pool").value);
  const h = Number($("half-life").value);
  pool.log_base = $("base").value;
  pool.half_life_days = h > 0 ? h : null;
  return pool;
}

function heatmap(canvas, rows) {
  const ctx = canvas.getContext("2d");
  const n = rows.length;
  const cell = canvas.width / n;
  const max = Math.max(1e-12, ...rows.flat());
  ctx.clearRect(0, 0, canvas.width, canvas.height);
  ctx.font = "11px monospace";
  ctx.textAlign = "center";
  ctx.textBaseline = "middle";
  rows.forEach((row, i) =>
    row.forEach((v, j) => {
      const t = v / max;
      ctx.fillStyle = `rgb(${255 - 200 * t}, ${255 - 120 * t}, 255)`;
      ctx.fillRect(j * cell, i * cell, cell, cell);
      ctx.fillStyle = t > 0.6 ? "#fff" : "#000";
      ctx.fillText(v.toFixed(3), (j + 0.5) * cell, (i + 0.5) * cell);
    }),
  );
}

function renderScores(n) {
  if (scores.length !== n) scores = Array.from({ length: n }, (_, i) => -1 - 0.25 * i);
  $("scores").innerHTML = scores
    .map(
      (s, i) =>
        `<label>c${i} <input type="range" min="-5" max="0" step="0.05" value="${s}" data-i="${i}"> <output>${s.toFixed(2)}</output></label>`,
    )
    .join("<br>");
  for (const el of $("scores").querySelectorAll("input")) {
    el.addEventListener("input", () => {
      scores[el.dataset.i] = Number(el.value);
      el.nextElementSibling.textContent = Number(el.value).toFixed(2);
      updateLoss();
    });
  }
}

function analyze() {
  $("error").textContent = "";
  try {
    const a = JSON.parse(analyze_pool(JSON.stringify(poolRequest())));
    heatmap($("m-semantic"), a.semantic);
    heatmap($("m-popularity"), a.popularity);
    heatmap($("m-multi"), a.multi);
    $("semantic-order").textContent = JSON.stringify(a.semantic_order);
    $("order").textContent = JSON.stringify(a.order);
    renderScores(a.order.length);
    updateLoss();
  } catch (e) {
    $("error").textContent = String(e);
  }
}

function updateLoss() {
  try {
    const req = { ...poolRequest(), pi_s: scores, alpha: Number($("alpha").value), mode: $("mode").value };
    const r = JSON.parse(comparison_loss(JSON.stringify(req)));
    $("rounds").innerHTML =
      "<tr><th>positive</th><th>reward</th><th>penalties</th><th>term</th></tr>" +
      r.rounds
        .map(
          (x) =>
            `<tr><td>c${x.positive}</td><td>${x.reward.toFixed(4)}</td><td>${x.penalties
              .map(([k, v]) => `c${k}:${v.toFixed(3)}`)
              .join(" ")}</td><td>${x.term.toFixed(4)}</td></tr>`,
        )
        .join("");
    $("loss").textContent = `L_pc = ${r.l_pc.toFixed(4)}, L_pa = ${r.l_pa.toFixed(4)}, total = ${r.total.toFixed(4)}`;
    $("error").textContent = "";
  } catch (e) {
    $("error").textContent = String(e);
  }
}

function drawDiscount() {
  const canvas = $("discount");
  const ctx = canvas.getContext("2d");
  ctx.clearRect(0, 0, canvas.width, canvas.height);
  const colors = { e: "#1f77b4", 2: "#d62728" };
  for (const base of ["e", "2"]) {
    const v = JSON.parse(discount_curve(20, base));
    const max = 1 / Math.log(2);
    ctx.strokeStyle = colors[base];
    ctx.beginPath();
    v.forEach((y, i) => {
      const px = 10 + (i / (v.length - 1)) * (canvas.width - 20);
      const py = canvas.height - 10 - (y / max) * (canvas.height - 20);
      i ? ctx.lineTo(px, py) : ctx.moveTo(px, py);
    });
    ctx.stroke();
    ctx.fillStyle = colors[base];
    ctx.fillText(`log base ${base}`, canvas.width - 90, base === "e" ? 20 : 35);
  }
}

await init();
$("pool").value = JSON.stringify(POOL, null, 2);
$("analyze").addEventListener("click", analyze);
$("base").addEventListener("change", analyze);
$("half-life").addEventListener("input", () => {
  $("half-life-out").textContent = $("half-life").value === "0" ? "off" : $("half-life").value;
  analyze();
});
$("alpha").addEventListener("input", updateLoss);
$("mode").addEventListener("change", updateLoss);
drawDiscount();
analyze();

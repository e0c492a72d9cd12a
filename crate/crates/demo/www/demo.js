import init, { simulate, exploreRule, exploreRamp } from "./pkg/crisis_demo.js";

const $ = (id) => document.getElementById(id);
const num = (id) => parseFloat($(id).value);
const clock = (ms) => ms == null ? "—" : `${Math.floor(ms / 60000)}:${String(Math.floor(ms / 1000) % 60).padStart(2, "0")}`;

function runSimulation() {
  $("sim-status").textContent = "running…";
  const overrides = { ramp_slope: num("sim-slope"), wind_speed: num("sim-wind"), end_min: Math.round(num("sim-end")) };
  setTimeout(() => {
    const started = performance.now();
    let sim;
    try {
      sim = JSON.parse(simulate(JSON.stringify(overrides)));
    } catch (e) {
      $("sim-status").textContent = `error: ${e}`;
      return;
    }
    const ms = Math.round(performance.now() - started);
    $("sim-status").textContent = `${sim.events} events in ${ms} ms`;
    $("sim-rates").textContent = "Measures per minute: " +
      sim.rates.map((r) => `${r.name} ${r.per_minute}`).join(", ");
    const rows = sim.milestones.map((m) =>
      `<tr><td>${m.name}</td><td>${m.etype}</td><td>${clock(m.expected)}</td><td>${clock(m.actual)}</td>` +
      `<td class="${m.pass ? "pass" : "fail"}">${m.pass ? "ok" : "differs"}</td></tr>`);
    $("sim-table").innerHTML = "<tr><th>milestone</th><th>event</th><th>expected</th><th>actual</th><th></th></tr>" + rows.join("");
  }, 10);
}

function runRule() {
  const slopeText = $("rule-slope").value.trim();
  const slope = slopeText === "" ? NaN : parseFloat(slopeText);
  const verdict = JSON.parse(exploreRule(num("rule-value"), slope, num("rule-dose")));
  $("rule-out").textContent = `AlertRSN: ${verdict.alert ? "yes" : "no"}\nzone: ${verdict.zone}`;
}

function runRamp() {
  const points = JSON.parse(exploreRamp(num("ramp-v0"), num("ramp-slope"), Math.round(num("ramp-min")), num("ramp-noise"), Math.round(num("ramp-seed"))));
  const canvas = $("ramp-canvas");
  const ctx = canvas.getContext("2d");
  ctx.clearRect(0, 0, canvas.width, canvas.height);
  if (points.length === 0) return;
  const maxT = points[points.length - 1].t_min || 1;
  const values = points.map((p) => p.value);
  const lo = Math.min(0, ...values), hi = Math.max(2.5, ...values);
  const x = (t) => 30 + (t / maxT) * (canvas.width - 40);
  const y = (v) => canvas.height - 20 - ((v - lo) / (hi - lo)) * (canvas.height - 30);
  ctx.strokeStyle = "#c62828";
  ctx.setLineDash([4, 4]);
  for (const level of [1, 2]) {
    ctx.beginPath(); ctx.moveTo(x(0), y(level)); ctx.lineTo(x(maxT), y(level)); ctx.stroke();
  }
  ctx.setLineDash([]);
  ctx.strokeStyle = "#1565c0";
  ctx.beginPath();
  points.forEach((p, i) => (i ? ctx.lineTo(x(p.t_min), y(p.value)) : ctx.moveTo(x(p.t_min), y(p.value))));
  ctx.stroke();
  for (const p of points) {
    ctx.fillStyle = p.alert ? "#c62828" : "#1565c0";
    ctx.beginPath(); ctx.arc(x(p.t_min), y(p.value), 3, 0, 2 * Math.PI); ctx.fill();
  }
  const first = points.find((p) => p.alert);
  const last = points[points.length - 1];
  $("ramp-out").textContent = (first ? `first alert at ${first.t_min} min` : "no alert") +
    `; last slope estimate ${last.slope == null ? "undefined" : last.slope.toFixed(4)}`;
}

await init();
$("sim-run").addEventListener("click", runSimulation);
for (const id of ["rule-value", "rule-slope", "rule-dose"]) $(id).addEventListener("input", runRule);
for (const id of ["ramp-v0", "ramp-slope", "ramp-min", "ramp-noise", "ramp-seed"]) $(id).addEventListener("input", runRamp);
runRule();
runRamp();

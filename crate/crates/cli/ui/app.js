const $ = (id) => document.getElementById(id);
let session = null;
let view = null;
let dim = null;
let proposals = [];

async function api(method, path, body) {
  const res = await fetch(path, {
    method,
    headers: body ? { "content-type": "application/json" } : {},
    body: body ? JSON.stringify(body) : undefined,
  });
  const data = await res.json();
  if (!res.ok) throw new Error(data.message || res.statusText);
  return data;
}

function log(msg) {
  $("log").textContent = msg + "\n" + $("log").textContent;
}

function px(p) {
  const c = $("scene");
  return [p[0] * c.width, (1 - p[1]) * c.height];
}

function circle(ctx, p, r, fill) {
  const [x, y] = px(p);
  ctx.beginPath();
  ctx.arc(x, y, r * $("scene").width, 0, 2 * Math.PI);
  ctx.fillStyle = fill;
  ctx.fill();
}

function polyline(ctx, pts, stroke, width) {
  if (pts.length < 2) return;
  ctx.beginPath();
  pts.forEach((p, i) => {
    const [x, y] = px(p);
    i ? ctx.lineTo(x, y) : ctx.moveTo(x, y);
  });
  ctx.strokeStyle = stroke;
  ctx.lineWidth = width;
  ctx.stroke();
}

function draw() {
  const ctx = $("scene").getContext("2d");
  ctx.clearRect(0, 0, 520, 520);
  if (!view) return;
  const s = view.state;
  circle(ctx, s.obstacle.center, s.obstacle.radius, "#f3b0b0");
  circle(ctx, s.goal, view.env.success_tol, "#b8e6b8");
  if (s.object) circle(ctx, s.object, 0.05, "#c9a36b");
  polyline(ctx, view.path, "#333", 2);
  proposals.forEach((p, i) => polyline(ctx, p.trajectory, `hsl(${(i * 47) % 360},70%,50%)`, 1.5));
  circle(ctx, s.robot, 0.012, "#2255cc");
}

async function refresh() {
  view = await api("GET", `/api/sessions/${session}`);
  $("status").textContent = `${session} step ${view.state.step} ${view.done ? (view.success ? "success" : "failed") : ""}`;
  draw();
}

async function loadDims() {
  $("dims").innerHTML = "";
  try {
    const d = await api("GET", `/api/sessions/${session}/dimensions`);
    d.dimensions.forEach((x) => {
      const el = document.createElement("div");
      el.className = "dim" + (x.effective ? "" : " off") + (x.index === dim ? " sel" : "");
      el.textContent = `z${x.index}  ${x.snr_db.toFixed(1)} dB`;
      el.onclick = () => { dim = x.index; loadDims(); loadProposals(); };
      $("dims").appendChild(el);
    });
  } catch (e) {
    log(e.message);
  }
}

async function loadProposals() {
  $("props").innerHTML = "";
  proposals = [];
  if (dim === null || view.done) return draw();
  const set = await api("GET", `/api/sessions/${session}/proposals?dim=${dim}`);
  proposals = set.proposals;
  proposals.forEach((p, i) => {
    const b = document.createElement("button");
    b.textContent = `${i}: ${p.offset.toFixed(2)}`;
    b.style.color = `hsl(${(i * 47) % 360},70%,40%)`;
    b.onclick = () => execute("select", { proposal: p.id });
    $("props").appendChild(b);
  });
  draw();
}

async function execute(kind, body) {
  try {
    const r = await api("POST", `/api/sessions/${session}/${kind}`, body);
    log(`${kind}: step ${r.step} done=${r.done} success=${r.success}`);
  } catch (e) {
    log(e.message);
  }
  proposals = [];
  await refresh();
  await loadProposals();
}

$("new").onclick = async () => {
  try {
    const v = await api("POST", "/api/sessions", { checkpoint: $("ckpt").value, seed: Number($("seed").value) });
    session = v.id;
    dim = null;
    proposals = [];
    await refresh();
    await loadDims();
  } catch (e) {
    log(e.message);
  }
};
$("auto0").onclick = () => session && execute("auto", { alpha: 0 });
$("auto2").onclick = () => session && execute("auto", { alpha: 2 });

api("GET", "/api/checkpoints").then((c) => {
  c.checkpoints.forEach((id) => {
    const o = document.createElement("option");
    o.textContent = id;
    $("ckpt").appendChild(o);
  });
});

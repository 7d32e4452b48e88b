import { HttpClient } from "./client.js";
import { Playback, drawViews } from "./render.js";
import { buttonAction, canSubmit, currentMotion, keyToAction } from "./state.js";
import { Session } from "./session.js";
import { MotionPayload, selectionComplete } from "./types.js";

const client = new HttpClient("");

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing element #${id}`);
  return node as T;
}

async function start() {
  const participant = (el<HTMLInputElement>("participant").value || "").trim();
  if (!participant) {
    el("status").textContent = "Enter a participant id first.";
    return;
  }
  el("setup").style.display = "none";
  el("app").style.display = "";

  const motions = await client.listMotions();
  const session = new Session(client, participant, motions.map((m) => m.id));

  const canvases = ["view0", "view1", "view2", "view3"].map((id) =>
    el<HTMLCanvasElement>(id),
  );
  const cache = new Map<string, MotionPayload>();
  let active: MotionPayload | null = null;

  const playback = new Playback(
    () => active,
    (frame) => {
      if (active) drawViews(canvases, active, frame);
    },
  );
  playback.start();

  async function showCurrent() {
    const id = currentMotion(session.state);
    if (!cache.has(id)) {
      el("status").textContent = "loading motion...";
      try {
        cache.set(id, await client.fetchMotion(id));
      } catch (err) {
        el("status").textContent = `failed to load ${id} — retrying in 2s`;
        setTimeout(showCurrent, 2000);
        return;
      }
    }
    active = cache.get(id) ?? null;
    playback.reset();
    if (active) drawViews(canvases, active, 0);
    el("status").textContent = "";
  }

  function renderState() {
    const st = session.state;
    if (st.status === "done") {
      el("app").style.display = "none";
      el("finished").style.display = "";
      return;
    }
    const motion = currentMotion(st);
    el("progress").textContent = `motion ${st.index + 1} / ${st.motions.length}`;
    const sel = st.selections[motion];
    for (let v = 1; v <= 7; v++) {
      el(`ease${v}`).classList.toggle("selected", sel.ease === v);
      el(`freq${v}`).classList.toggle("selected", sel.frequency === v);
    }
    el("seenYes").classList.toggle("selected", sel.seenBefore === true);
    el("seenNo").classList.toggle("selected", sel.seenBefore === false);
    (el<HTMLButtonElement>("submit")).disabled = !canSubmit(st);
    (el<HTMLButtonElement>("next")).disabled = !st.submitted[motion];
    (el<HTMLButtonElement>("prev")).disabled = st.index === 0;
    el("error").textContent = st.error ?? "";
    el("submittedBadge").style.display = st.submitted[motion] ? "" : "none";
  }

  let shownIndex = -1;
  session.onChange(() => {
    renderState();
    if (session.state.index !== shownIndex && session.state.status !== "done") {
      shownIndex = session.state.index;
      void showCurrent();
    }
  });

  // Buttons and arrow keys dispatch the same actions.
  el("prev").addEventListener("click", () => session.dispatch(buttonAction("prev")));
  el("next").addEventListener("click", () => session.dispatch(buttonAction("next")));
  document.addEventListener("keydown", (ev) => {
    const action = keyToAction(ev.key);
    if (action) session.dispatch(action);
  });

  for (let v = 1; v <= 7; v++) {
    const value = v;
    el(`ease${v}`).addEventListener("click", () =>
      session.dispatch({ type: "select", field: "ease", value }),
    );
    el(`freq${v}`).addEventListener("click", () =>
      session.dispatch({ type: "select", field: "frequency", value }),
    );
  }
  el("seenYes").addEventListener("click", () =>
    session.dispatch({ type: "select", field: "seenBefore", value: true }),
  );
  el("seenNo").addEventListener("click", () =>
    session.dispatch({ type: "select", field: "seenBefore", value: false }),
  );
  el("submit").addEventListener("click", () => void session.submitCurrent());

  el<HTMLSelectElement>("speed").addEventListener("change", (ev) => {
    playback.speed = parseFloat((ev.target as HTMLSelectElement).value);
  });

  await session.hydrate();
  renderState();
  shownIndex = session.state.index;
  await showCurrent();
}

el("start").addEventListener("click", () => void start());

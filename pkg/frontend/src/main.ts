// App wiring: one session per tab, server as the single source of truth.

import { GameClient, type NextResponse } from "./api.js";
import {
  renderAssignmentControls,
  renderError,
  renderProgress,
  renderReport,
  renderReveal,
  renderSceneText,
} from "./render.js";
import { assign, canSubmit, newViewState, validationError, type ViewState } from "./state.js";

const client = new GameClient("");
const root = document.getElementById("app") as HTMLElement;

let sessionId = "";
let state: ViewState | null = null;

function clear(): void {
  root.replaceChildren();
}

async function showStart(): Promise<void> {
  clear();
  const { movies } = await client.movies();
  const intro = document.createElement("section");
  intro.className = "start";
  intro.innerHTML = `
    <h2>Who says what?</h2>
    <p>You will read one scene at a time. The main characters are hidden
    behind IDs like P0 and P1. Assign every ID to a character name, tell us
    whether you needed earlier scenes to decide, and submit. Answers are
    revealed only after you submit each scene.</p>
  `;
  const raterInput = document.createElement("input");
  raterInput.placeholder = "your rater id";
  raterInput.value = "rater";
  const movieInfo = document.createElement("p");
  movieInfo.textContent = `Movies in this study: ${movies.join(", ")}`;
  const startBtn = document.createElement("button");
  startBtn.textContent = "Start session";
  startBtn.addEventListener("click", async () => {
    const created = await client.createSession(raterInput.value || "rater");
    sessionId = created.session_id;
    await showNext();
  });
  intro.append(raterInput, movieInfo, startBtn);
  root.appendChild(intro);
}

async function showNext(): Promise<void> {
  const next: NextResponse = await client.next(sessionId);
  if (next.done || !next.scene) {
    await showReport();
    return;
  }
  state = newViewState(next.scene);
  clear();
  root.appendChild(renderProgress(next.progress.answered, next.progress.total));
  root.appendChild(renderSceneText(next.scene));

  const errorBox = document.createElement("p");
  errorBox.className = "error";
  const submit = document.createElement("button");
  submit.textContent = "Submit guesses";
  submit.disabled = true;

  const needsRow = document.createElement("label");
  needsRow.className = "needs-history";
  const needsBox = document.createElement("input");
  needsBox.type = "checkbox";
  needsRow.append(needsBox, document.createTextNode(" I needed earlier scenes to decide"));

  const refresh = () => {
    if (!state) return;
    const problem = validationError(state);
    errorBox.textContent = problem ?? "";
    submit.disabled = !canSubmit(state);
  };

  root.appendChild(
    renderAssignmentControls(next.scene, (slot, name) => {
      if (!state) return;
      state = assign(state, slot, name);
      refresh();
    })
  );
  root.append(needsRow, errorBox, submit);

  submit.addEventListener("click", async () => {
    if (!state || !canSubmit(state)) return;
    submit.disabled = true; // no duplicate submits from the client
    state = { ...state, submitted: true, needsHistory: needsBox.checked };
    try {
      const result = await client.guess(
        sessionId,
        state.scene.scene_index,
        state.assignments,
        state.needsHistory,
        state.scene.movie_id
      );
      root.appendChild(renderReveal(result));
      const nextBtn = document.createElement("button");
      nextBtn.textContent = "Next scene";
      nextBtn.addEventListener("click", () => void showNext());
      root.appendChild(nextBtn);
    } catch (err) {
      root.appendChild(renderError(err instanceof Error ? err.message : String(err)));
    }
  });
}

async function showReport(): Promise<void> {
  const report = await client.report(sessionId);
  clear();
  root.appendChild(renderReport(report));
}

void showStart();

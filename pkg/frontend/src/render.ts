// DOM construction for the three screens: scene, reveal, report.

import type { GuessResult, Report, SceneView } from "./api.js";
import { slotColorClass } from "./state.js";

function el<K extends keyof HTMLElementTagNameMap>(
  tag: K,
  className?: string,
  text?: string
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  if (className) node.className = className;
  if (text !== undefined) node.textContent = text;
  return node;
}

export function renderProgress(answered: number, total: number): HTMLElement {
  return el("div", "progress", `Scene ${Math.min(answered + 1, total)} of ${total}`);
}

export function renderSceneText(scene: SceneView): HTMLElement {
  const box = el("section", "scene");
  if (scene.heading) {
    box.appendChild(el("h3", "heading", scene.heading));
  }
  for (const ut of scene.utterances) {
    if (ut.is_background) {
      box.appendChild(el("p", "background", ut.text));
    } else if (scene.slots.includes(ut.speaker)) {
      const line = el("p", "line");
      line.appendChild(el("span", slotColorClass(ut.speaker), ut.speaker));
      line.appendChild(document.createTextNode(`: ${ut.text}`));
      box.appendChild(line);
    } else {
      const line = el("p", "line minor");
      line.appendChild(el("span", "speaker", ut.speaker));
      line.appendChild(document.createTextNode(`: ${ut.text}`));
      box.appendChild(line);
    }
  }
  return box;
}

export function renderAssignmentControls(
  scene: SceneView,
  onChange: (slot: string, name: string) => void
): HTMLElement {
  const form = el("div", "assignments");
  for (const slot of scene.slots) {
    const row = el("label", "assignment-row");
    row.appendChild(el("span", slotColorClass(slot), slot));
    const select = el("select");
    select.dataset.slot = slot;
    select.appendChild(new Option("choose...", ""));
    for (const name of scene.candidates) {
      select.appendChild(new Option(name, name));
    }
    select.addEventListener("change", () => onChange(slot, select.value));
    row.appendChild(select);
    form.appendChild(row);
  }
  return form;
}

export function renderReveal(result: GuessResult): HTMLElement {
  const box = el("section", "reveal");
  box.appendChild(el("h3", undefined, "Answers"));
  for (const [slot, info] of Object.entries(result.results)) {
    const row = el("p", info.correct ? "correct" : "wrong");
    row.appendChild(el("span", slotColorClass(slot), slot));
    row.appendChild(
      document.createTextNode(
        ` was ${info.answer} - ${info.correct ? "correct" : "wrong"}`
      )
    );
    box.appendChild(row);
  }
  box.appendChild(
    el("p", "scene-score", `Scene accuracy: ${(result.scene_accuracy * 100).toFixed(0)}%`)
  );
  return box;
}

// Report numbers come straight from the server; nothing is recomputed here.
export function renderReport(report: Report): HTMLElement {
  const box = el("section", "report");
  box.appendChild(el("h2", undefined, "Performance report"));
  const overall =
    report.overall_accuracy === null
      ? "no guesses yet"
      : `${(report.overall_accuracy * 100).toFixed(1)}%`;
  box.appendChild(el("p", "overall", `Overall accuracy: ${overall}`));
  box.appendChild(
    el("p", undefined, `Instances answered: ${report.n_instances} across ${report.answered} scenes`)
  );
  if (report.needs_history_fraction !== null) {
    box.appendChild(
      el(
        "p",
        undefined,
        `Scenes needing earlier context: ${(report.needs_history_fraction * 100).toFixed(1)}%`
      )
    );
  }
  const table = el("table", "per-scene");
  const head = el("tr");
  for (const h of ["Movie", "Scene", "Accuracy", "Needed history"]) {
    head.appendChild(el("th", undefined, h));
  }
  table.appendChild(head);
  for (const row of report.per_scene) {
    const tr = el("tr");
    tr.appendChild(el("td", undefined, row.movie_id));
    tr.appendChild(el("td", undefined, String(row.scene_index)));
    tr.appendChild(el("td", undefined, `${(row.accuracy * 100).toFixed(0)}%`));
    tr.appendChild(el("td", undefined, row.needs_history ? "yes" : "no"));
    table.appendChild(tr);
  }
  box.appendChild(table);
  return box;
}

export function renderError(message: string): HTMLElement {
  return el("p", "error", message);
}

/** DOM builders for the console panels.
 *
 * Each builder consumes view-model rows (see state.ts) plus callbacks and
 * returns a detached element the app mounts; no builder touches the
 * network or owns state.
 */

import {
  BlockRow,
  BoundsPanel,
  CandidateRow,
  DeployPanel,
} from "./state.js";

function el<K extends keyof HTMLElementTagNameMap>(
  tag: K,
  className?: string,
  text?: string,
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  if (className) node.className = className;
  if (text !== undefined) node.textContent = text;
  return node;
}

const fmt = (x: number) => x.toFixed(6);

export function renderBounds(panel: BoundsPanel): HTMLElement {
  const root = el("section", "panel bounds");
  root.append(el("h2", undefined, "Specification"));
  const phase = el("div", `phase phase-${panel.phase.toLowerCase()}`);
  phase.textContent = `${panel.phase} (revision ${panel.revision})`;
  root.append(phase);
  const grid = el("div", "bounds-grid");
  grid.append(
    el("span", "label", "certified lower"),
    el("span", "value", fmt(panel.lower)),
    el("span", "label", "best case upper"),
    el("span", "value", fmt(panel.upper)),
    el("span", "label", "model states"),
    el("span", "value", String(panel.states)),
  );
  root.append(grid);
  const formula = el("code", "formula", panel.formula);
  root.append(formula);
  return root;
}

export function renderFormulaBlocks(blocks: BlockRow[]): HTMLElement {
  const root = el("section", "panel blocks");
  root.append(el("h2", undefined, "Mission steps"));
  for (const b of blocks) {
    const item = el("div", "block");
    item.append(el("h3", undefined, `step ${b.index} — ${b.threshold}`));
    const phi = el("div", "clauses");
    phi.append(el("span", "label", "maintain"));
    if (b.phi.length === 0) phi.append(el("code", undefined, "true"));
    for (const c of b.phi) phi.append(el("code", undefined, c));
    const psi = el("div", "clauses");
    psi.append(el("span", "label", "reach"));
    for (const c of b.psi) psi.append(el("code", undefined, c));
    item.append(phi, psi);
    root.append(item);
  }
  return root;
}

export interface NegotiationCallbacks {
  onAccept(candidateId: string | null): void;
  onRefresh(): void;
}

export function renderCandidates(
  rows: CandidateRow[],
  enabled: boolean,
  callbacks: NegotiationCallbacks,
): HTMLElement {
  const root = el("section", "panel candidates");
  root.append(el("h2", undefined, "Relaxation offers"));
  if (rows.length === 0) {
    root.append(el("p", "empty", "no guaranteed relaxations"));
  } else {
    const table = el("table");
    const head = el("tr");
    for (const title of ["offer", "Δ lower", "lower", "upper", ""])
      head.append(el("th", undefined, title));
    table.append(head);
    for (const row of rows) {
      const tr = el("tr");
      tr.append(
        el("td", "desc", row.description),
        el("td", "num", `+${fmt(row.delta)}`),
        el("td", "num", fmt(row.lower)),
        el("td", "num", fmt(row.upper)),
      );
      const cell = el("td");
      const button = el("button", undefined, "Accept");
      button.disabled = !enabled;
      button.addEventListener("click", () => callbacks.onAccept(row.id));
      cell.append(button);
      tr.append(cell);
      table.append(tr);
    }
    root.append(table);
  }
  const controls = el("div", "controls");
  const keep = el("button", undefined, "Keep current");
  keep.disabled = !enabled;
  keep.addEventListener("click", () => callbacks.onAccept(null));
  const refresh = el("button", "secondary", "Refresh offers");
  refresh.disabled = !enabled;
  refresh.addEventListener("click", () => callbacks.onRefresh());
  controls.append(keep, refresh);
  root.append(controls);
  return root;
}

export interface DeployCallbacks {
  onDeploy(seed: number | null): void;
  onStep(): void;
  onAuto(): void;
  onEvent(rule: Record<string, unknown>): void;
}

export function renderDeploy(
  panel: DeployPanel | null,
  phase: string,
  enabled: boolean,
  callbacks: DeployCallbacks,
): HTMLElement {
  const root = el("section", "panel deploy");
  root.append(el("h2", undefined, "Deployment"));

  if (panel) {
    const grid = el("div", "bounds-grid");
    grid.append(
      el("span", "label", "stage"),
      el("span", "value", `${panel.stage} / ${panel.stagesTotal}`),
      el("span", "label", "satisfied up to"),
      el("span", "value badge", `step ${panel.satisfiedUpTo}`),
      el("span", "label", "uncertainty disc"),
      el("span", "value", `${panel.discRadius.toFixed(3)} m`),
    );
    root.append(grid);
  }

  if (panel?.verdict !== null && panel?.verdict !== undefined) {
    const banner = el(
      "div",
      panel.verdict ? "verdict ok" : "verdict bad",
      panel.verdict ? "mission satisfied" : "mission violated",
    );
    root.append(banner);
  }

  const controls = el("div", "controls");
  if (phase === "Negotiating" || phase === "Renegotiating") {
    const seed = el("input") as HTMLInputElement;
    seed.type = "number";
    seed.placeholder = "seed";
    seed.id = "seed-input";
    const deploy = el("button", undefined,
      phase === "Renegotiating" ? "Resume" : "Deploy");
    deploy.disabled = !enabled;
    deploy.addEventListener("click", () =>
      callbacks.onDeploy(seed.value === "" ? null : Number(seed.value)),
    );
    if (phase === "Negotiating") controls.append(seed);
    controls.append(deploy);
  }
  if (phase === "Deployed") {
    const step = el("button", undefined, "Step");
    step.disabled = !enabled;
    step.addEventListener("click", () => callbacks.onStep());
    const auto = el("button", undefined, "Auto-run");
    auto.disabled = !enabled;
    auto.addEventListener("click", () => callbacks.onAuto());
    controls.append(step, auto);
  }
  root.append(controls);

  if (phase === "Deployed") root.append(renderEventForm(enabled, callbacks));
  return root;
}

function renderEventForm(
  enabled: boolean,
  callbacks: DeployCallbacks,
): HTMLElement {
  const form = el("div", "event-form");
  form.append(el("h3", undefined, "Inject environment event"));
  const kind = el("select") as HTMLSelectElement;
  for (const k of [
    "remove_psi_clause",
    "add_phi_clause",
    "raise_threshold",
    "remove_phi_clause",
    "add_psi_clause",
    "lower_threshold",
  ]) {
    const option = el("option", undefined, k) as HTMLOptionElement;
    option.value = k;
    kind.append(option);
  }
  const j = el("input") as HTMLInputElement;
  j.type = "number";
  j.placeholder = "step j";
  const index = el("input") as HTMLInputElement;
  index.type = "number";
  index.placeholder = "clause index";
  const pPlus = el("input") as HTMLInputElement;
  pPlus.type = "number";
  pPlus.step = "0.01";
  pPlus.placeholder = "new threshold";
  const submit = el("button", "danger", "Inject");
  submit.disabled = !enabled;
  submit.addEventListener("click", () => {
    const rule: Record<string, unknown> = {
      kind: kind.value,
      j: Number(j.value),
    };
    if (index.value !== "") rule.index = Number(index.value);
    if (pPlus.value !== "") rule.p_plus = Number(pPlus.value);
    callbacks.onEvent(rule);
  });
  form.append(kind, j, index, pPlus, submit);
  return form;
}

export function renderError(message: string | null): HTMLElement {
  const root = el("div", "error-bar");
  if (message) root.textContent = message;
  else root.classList.add("hidden");
  return root;
}

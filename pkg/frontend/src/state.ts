/** Pure view-model derivations: service payloads in, display rows out.
 *
 * Nothing in this module computes a probability, reorders a candidate
 * list, or invents a phase — every value is copied from the service
 * response it came from.  Keeping these functions pure makes the
 * "console performs no math" property directly testable.
 */

import {
  Candidate,
  Deployment,
  FormulaBlock,
  SessionView,
} from "./types.js";

export interface BoundsPanel {
  phase: SessionView["phase"];
  revision: number;
  lower: number;
  upper: number;
  states: number;
  formula: string;
  satisfied: boolean | null;
}

export function boundsPanel(view: SessionView): BoundsPanel {
  return {
    phase: view.phase,
    revision: view.revision,
    lower: view.lower,
    upper: view.upper,
    states: view.states,
    formula: view.formula,
    satisfied: view.satisfied ?? null,
  };
}

export interface CandidateRow {
  id: string;
  description: string;
  lower: number;
  upper: number;
  delta: number;
  basis: number;
}

/** Candidate table rows in exactly the order the service returned them. */
export function candidateRows(candidates: Candidate[]): CandidateRow[] {
  return candidates.map((c) => ({
    id: c.id,
    description: c.description,
    lower: c.lower,
    upper: c.upper,
    delta: c.delta,
    basis: c.basis,
  }));
}

export interface BlockRow {
  index: number; // 1-based, matching the service's step numbering
  phi: string[];
  psi: string[];
  threshold: string;
}

export function blockRows(blocks: FormulaBlock[]): BlockRow[] {
  return blocks.map((b, i) => ({
    index: i + 1,
    phi: b.phi,
    psi: b.psi,
    threshold: `P ${b.strict ? ">" : ">="} ${b.p}`,
  }));
}

export interface DeployPanel {
  stage: number;
  stagesTotal: number;
  satisfiedUpTo: number;
  discRadius: number;
  pose: [number, number, number];
  trajectory: [number, number][];
  verdict: boolean | null;
}

export function deployPanel(
  view: SessionView,
  deployment: Deployment,
): DeployPanel {
  return {
    stage: deployment.stage,
    stagesTotal: view.stages_total,
    satisfiedUpTo: deployment.satisfied_up_to,
    discRadius: deployment.disc_radius,
    pose: deployment.pose,
    trajectory: deployment.trajectory,
    verdict: view.satisfied ?? null,
  };
}

export function canNegotiate(view: SessionView): boolean {
  return view.phase === "Negotiating" || view.phase === "Renegotiating";
}

export function canStep(view: SessionView): boolean {
  return view.phase === "Deployed";
}

export function isClosed(view: SessionView): boolean {
  return view.phase === "Closed";
}

/** Resume after renegotiation keeps the seed; a first deploy needs one. */
export function needsSeed(view: SessionView): boolean {
  return view.phase === "Negotiating";
}

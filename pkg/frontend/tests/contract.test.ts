/** Contract tests against a live negotiation service.
 *
 * A real server process is spawned on a scratch store; every number the
 * console would display is checked against the raw JSON the service
 * returned, which is the "no client-side probability math" guarantee.
 */

import { ChildProcess, spawn } from "node:child_process";
import { afterAll, beforeAll, describe, expect, it } from "vitest";

import { ServiceClient, ServiceError } from "../src/client.js";
import {
  blockRows,
  boundsPanel,
  candidateRows,
  deployPanel,
} from "../src/state.js";
import { CandidateListSchema, SessionView } from "../src/types.js";

const PORT = 8931;
const BASE = `http://127.0.0.1:${PORT}`;
const SEED = 11;

let server: ChildProcess;
const client = new ServiceClient(BASE);

async function waitForService(): Promise<void> {
  const deadline = Date.now() + 60_000;
  while (Date.now() < deadline) {
    try {
      const resp = await fetch(`${BASE}/sessions/__probe__`);
      if (resp.status === 404) return;
    } catch {
      /* not listening yet */
    }
    await new Promise((r) => setTimeout(r, 250));
  }
  throw new Error("negotiation service did not come up");
}

beforeAll(async () => {
  const boot = [
    "import tempfile, uvicorn",
    "from pctlplan.server import create_app",
    `uvicorn.run(create_app(tempfile.mkdtemp()), host='127.0.0.1', port=${PORT}, log_level='warning')`,
  ].join("; ");
  server = spawn("python3", ["-c", boot], { stdio: "inherit" });
  await waitForService();
});

afterAll(() => {
  server?.kill();
});

describe("negotiation view contract", () => {
  let view: SessionView;

  it("opens a session on the bundled scenario and echoes its bounds", async () => {
    view = await client.createSession("courier");
    const raw = (await (await fetch(`${BASE}/sessions/${view.id}`)).json()) as {
      lower: number;
      upper: number;
      phase: string;
      revision: number;
      states: number;
      formula: string;
      formula_blocks: { phi: string[]; psi: string[] }[];
    };

    const panel = boundsPanel(view);
    expect(panel.phase).toBe("Negotiating");
    expect(panel.lower).toBe(raw.lower);
    expect(panel.upper).toBe(raw.upper);
    expect(panel.states).toBe(raw.states);
    expect(panel.formula).toBe(raw.formula);

    const blocks = blockRows(view.formula_blocks);
    expect(blocks.map((b) => b.phi)).toEqual(
      raw.formula_blocks.map((b) => b.phi),
    );
    expect(blocks.map((b) => b.psi)).toEqual(
      raw.formula_blocks.map((b) => b.psi),
    );
  });

  it("reproduces the service's candidate ordering and bounds exactly", async () => {
    const raw = (await (
      await fetch(`${BASE}/sessions/${view.id}/candidates?limit=8`)
    ).json()) as {
      candidates: {
        id: string;
        description: string;
        lower: number;
        upper: number;
        delta: number;
      }[];
    };

    const rows = candidateRows(CandidateListSchema.parse(raw).candidates);
    expect(rows.length).toBeGreaterThan(0);
    expect(
      rows.map((r) => [r.id, r.description, r.lower, r.upper, r.delta]),
    ).toEqual(
      raw.candidates.map((c) => [
        c.id,
        c.description,
        c.lower,
        c.upper,
        c.delta,
      ]),
    );
  });

  it("surfaces a stale candidate as a refresh-worthy conflict", async () => {
    const list = await client.candidates(view.id, 8);
    const [first, second] = list.candidates;
    expect(first && second).toBeTruthy();
    view = await client.accept(view.id, { candidateId: first!.id });
    await expect(
      client.accept(view.id, { candidateId: second!.id }),
    ).rejects.toSatisfy(
      (err) => err instanceof ServiceError && err.isConflict,
    );
    // the accepted offer's prediction is now the session's certified bound
    expect(view.lower).toBe(first!.lower);
    expect(view.upper).toBe(first!.upper);
  });
});

describe("deployment and the mid-flight event", () => {
  let view: SessionView;

  it("deploys a fresh session and steps it five stages", async () => {
    view = await client.createSession("courier");
    view = await client.accept(view.id, { deploy: true, seed: SEED });
    expect(view.phase).toBe("Deployed");

    for (let k = 0; k < 5; k += 1) {
      const report = await client.step(view.id);
      expect(report.stage).toBe(k + 1);
      view = await client.getSession(view.id);
      const dep = view.deployment!;
      const panel = deployPanel(view, dep);
      // the overlay echoes the service's deployment record verbatim
      expect(panel.stage).toBe(dep.stage);
      expect(panel.satisfiedUpTo).toBe(report.satisfied_up_to);
      expect(panel.discRadius).toBe(dep.disc_radius);
      expect(panel.trajectory.length).toBeGreaterThan(1);
    }
  });

  it("transitions to renegotiation with a lowered bound on the outage", async () => {
    const before = view.lower;
    const dep = view.deployment!;
    view = await client.event(view.id, {
      kind: "remove_psi_clause",
      j: 3,
      index: 0,
      satisfied_up_to: dep.satisfied_up_to,
    });
    expect(view.phase).toBe("Renegotiating");
    expect(view.lower).toBeLessThan(before);
    // a Decrease event comes back with auto-enumerated recovery offers
    const rows = candidateRows(view.candidates);
    expect(rows.length).toBeGreaterThan(0);
    expect(boundsPanel(view).lower).toBe(view.lower);
  });

  it("resumes after accepting a recovery offer and reaches a verdict", async () => {
    const best = view.candidates[0]!;
    view = await client.accept(view.id, { candidateId: best.id });
    expect(view.lower).toBe(best.lower);
    view = await client.accept(view.id, { deploy: true });
    expect(view.phase).toBe("Deployed");
    while (view.phase === "Deployed") {
      await client.step(view.id);
      view = await client.getSession(view.id);
    }
    expect(view.phase).toBe("Closed");
    expect(typeof view.satisfied).toBe("boolean");
  });
});

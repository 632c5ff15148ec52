/** Console entry point: one session, server-authoritative state.
 *
 * The app keeps exactly one mutating request in flight, re-fetches the
 * session view after every mutation (polling, no push channel), and only
 * ever renders phases the service has confirmed.  Conflict responses
 * (stale candidate, wrong phase) trigger a refresh with a prompt instead
 * of a retry.
 */

import { ServiceClient, ServiceError } from "./client.js";
import { MapRenderer } from "./map.js";
import {
  renderBounds,
  renderCandidates,
  renderDeploy,
  renderError,
  renderFormulaBlocks,
} from "./panels.js";
import {
  blockRows,
  boundsPanel,
  candidateRows,
  canNegotiate,
  deployPanel,
  canStep,
} from "./state.js";
import { Candidate, SessionView } from "./types.js";

const CANDIDATE_LIMIT = 8;

class App {
  private view: SessionView | null = null;
  private candidates: Candidate[] = [];
  private busy = false;
  private error: string | null = null;
  private autoRunning = false;

  constructor(
    private readonly client: ServiceClient,
    private readonly root: HTMLElement,
    private readonly canvas: HTMLCanvasElement,
  ) {}

  async open(sessionId: string | null): Promise<void> {
    await this.mutate(async () => {
      this.view = sessionId
        ? await this.client.getSession(sessionId)
        : await this.client.createSession("courier");
      this.candidates = this.view.candidates;
      history.replaceState(null, "", `?session=${this.view.id}`);
    });
  }

  /** Run one mutating interaction; refresh + render no matter what. */
  private async mutate(fn: () => Promise<void>): Promise<void> {
    if (this.busy) return;
    this.busy = true;
    this.error = null;
    this.render();
    try {
      await fn();
    } catch (err) {
      if (err instanceof ServiceError && err.isConflict) {
        this.error = `${err.message} — refreshing`;
        await this.refresh();
      } else {
        this.error = err instanceof Error ? err.message : String(err);
      }
    } finally {
      this.busy = false;
      this.render();
    }
  }

  private async refresh(): Promise<void> {
    if (!this.view) return;
    this.view = await this.client.getSession(this.view.id);
    this.candidates = this.view.candidates;
  }

  private async refreshCandidates(): Promise<void> {
    if (!this.view) return;
    const list = await this.client.candidates(this.view.id, CANDIDATE_LIMIT);
    this.candidates = list.candidates;
  }

  private render(): void {
    const view = this.view;
    this.root.replaceChildren();
    this.root.append(renderError(this.error));
    if (!view) {
      this.root.append(renderError("connecting to the service…"));
      return;
    }

    this.root.append(renderBounds(boundsPanel(view)));
    this.root.append(renderFormulaBlocks(blockRows(view.formula_blocks)));

    if (canNegotiate(view)) {
      this.root.append(
        renderCandidates(candidateRows(this.candidates), !this.busy, {
          onAccept: (id) =>
            void this.mutate(async () => {
              this.view = await this.client.accept(view.id, {
                candidateId: id,
              });
              this.candidates = this.view.candidates;
            }),
          onRefresh: () => void this.mutate(() => this.refreshCandidates()),
        }),
      );
    }

    const dep = view.deployment;
    this.root.append(
      renderDeploy(
        dep ? deployPanel(view, dep) : null,
        view.phase,
        !this.busy,
        {
          onDeploy: (seed) =>
            void this.mutate(async () => {
              this.view = await this.client.accept(view.id, {
                deploy: true,
                seed: seed ?? undefined,
              });
              this.candidates = this.view.candidates;
            }),
          onStep: () =>
            void this.mutate(async () => {
              await this.client.step(view.id);
              await this.refresh();
            }),
          onAuto: () => void this.autoRun(),
          onEvent: (rule) =>
            void this.mutate(async () => {
              this.view = await this.client.event(view.id, {
                ...rule,
                satisfied_up_to: dep?.satisfied_up_to,
              } as never);
              this.candidates = this.view.candidates;
            }),
        },
      ),
    );

    new MapRenderer(this.canvas).draw(view.environment, view.deployment);
  }

  private async autoRun(): Promise<void> {
    if (this.autoRunning) return;
    this.autoRunning = true;
    try {
      while (this.view && canStep(this.view)) {
        await this.mutate(async () => {
          await this.client.step(this.view!.id);
          await this.refresh();
        });
        if (this.error) break;
      }
    } finally {
      this.autoRunning = false;
    }
  }
}

function bootstrap(): void {
  const params = new URLSearchParams(window.location.search);
  const base = params.get("service") ?? "http://127.0.0.1:8000";
  const client = new ServiceClient(base);
  const root = document.getElementById("panels");
  const canvas = document.getElementById("map") as HTMLCanvasElement | null;
  if (!root || !canvas) throw new Error("console markup missing");
  const app = new App(client, root, canvas);
  void app.open(params.get("session"));
}

bootstrap();

/** HTTP client for the negotiation service.
 *
 * Mutating calls are funneled through a per-client chain so at most one
 * is in flight at a time; reads may overlap.  Service errors surface as
 * ServiceError with the HTTP status and the server's own message, which
 * the UI renders verbatim.
 */

import {
  CandidateList,
  CandidateListSchema,
  ErrorDetailSchema,
  SessionView,
  SessionViewSchema,
  StepReport,
  StepReportSchema,
  UpdateRuleView,
} from "./types.js";

export class ServiceError extends Error {
  constructor(
    readonly status: number,
    message: string,
  ) {
    super(message);
    this.name = "ServiceError";
  }

  /** Stale-candidate and wrong-phase conflicts ask for a refresh, not a retry. */
  get isConflict(): boolean {
    return this.status === 409;
  }
}

async function throwServiceError(resp: Response): Promise<never> {
  let message = `${resp.status} ${resp.statusText}`;
  try {
    const body = ErrorDetailSchema.safeParse(await resp.json());
    if (body.success) message = body.data.detail.error;
  } catch {
    /* non-JSON error body: keep the status line */
  }
  throw new ServiceError(resp.status, message);
}

export interface AcceptOptions {
  candidateId?: string | null;
  deploy?: boolean;
  seed?: number;
}

export class ServiceClient {
  private mutationChain: Promise<unknown> = Promise.resolve();

  constructor(readonly baseUrl: string) {}

  private async getJson(path: string): Promise<unknown> {
    const resp = await fetch(this.baseUrl + path);
    if (!resp.ok) await throwServiceError(resp);
    return resp.json();
  }

  private postJson(path: string, body: unknown): Promise<unknown> {
    // serialize mutations; a rejection must not poison the chain
    const run = async () => {
      const resp = await fetch(this.baseUrl + path, {
        method: "POST",
        headers: { "content-type": "application/json" },
        body: JSON.stringify(body),
      });
      if (!resp.ok) await throwServiceError(resp);
      return resp.json();
    };
    const next = this.mutationChain.then(run, run);
    this.mutationChain = next.catch(() => undefined);
    return next;
  }

  async createSession(
    scenario: string | object,
    sessionId?: string,
  ): Promise<SessionView> {
    const body = { scenario, session_id: sessionId ?? null };
    return SessionViewSchema.parse(await this.postJson("/sessions", body));
  }

  async getSession(id: string): Promise<SessionView> {
    return SessionViewSchema.parse(await this.getJson(`/sessions/${id}`));
  }

  async candidates(id: string, limit: number): Promise<CandidateList> {
    return CandidateListSchema.parse(
      await this.getJson(`/sessions/${id}/candidates?limit=${limit}`),
    );
  }

  async accept(id: string, options: AcceptOptions = {}): Promise<SessionView> {
    const body = {
      candidate_id: options.candidateId ?? null,
      deploy: options.deploy ?? false,
      seed: options.seed ?? null,
    };
    return SessionViewSchema.parse(
      await this.postJson(`/sessions/${id}/accept`, body),
    );
  }

  async step(id: string, eps?: number): Promise<StepReport> {
    return StepReportSchema.parse(
      await this.postJson(`/sessions/${id}/step`, { eps: eps ?? null }),
    );
  }

  async event(id: string, rule: UpdateRuleView): Promise<SessionView> {
    return SessionViewSchema.parse(
      await this.postJson(`/sessions/${id}/event`, { rule }),
    );
  }
}

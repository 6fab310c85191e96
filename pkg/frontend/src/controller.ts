// Async glue between the pure editor state and the service client.
// One generation request is in flight at a time; later clicks queue-replace
// so the latest intent wins.

import { ServiceClient, ServiceClientError } from "./client.js";
import {
  applyPairResponse,
  applyResponse,
  buildRequest,
  dragShifts,
  type EditorState,
  type RegenerateMode,
} from "./state.js";
import { validateLayout } from "./validate.js";
import type { PairRequest } from "./types.js";

export class EditorController {
  private inflight = false;
  private queued: RegenerateMode | null = null;

  constructor(public state: EditorState,
              private client: ServiceClient,
              private onChange: (s: EditorState) => void = () => {}) {}

  update(next: EditorState): void {
    this.state = next;
    this.onChange(next);
  }

  async regenerate(mode: RegenerateMode, freshSeed?: number): Promise<void> {
    if (this.inflight) {
      this.queued = mode;
      return;
    }
    this.inflight = true;
    try {
      if (mode === "shifted-pair") {
        await this.runPair();
      } else {
        await this.runSingle(mode, freshSeed);
      }
    } catch (err) {
      const message = err instanceof ServiceClientError
        ? `${err.code}: ${err.message}`
        : String(err);
      this.update({ ...this.state, lastError: message });
    } finally {
      this.inflight = false;
      if (this.queued !== null) {
        const next = this.queued;
        this.queued = null;
        void this.regenerate(next);
      }
    }
  }

  private async runSingle(mode: RegenerateMode, freshSeed?: number): Promise<void> {
    const req = buildRequest(this.state, mode, freshSeed);
    if (!req) {
      const why = validateLayout(this.state.layout, this.state.vocab)[0];
      this.update({ ...this.state, lastError: why?.message ?? "invalid layout" });
      return;
    }
    const resp = await this.client.generate(req);
    this.update(applyResponse(this.state, resp));
  }

  private async runPair(): Promise<void> {
    const shifts = dragShifts(this.state);
    const base = this.state.compareBase;
    if (!shifts || !base) {
      this.update({ ...this.state, lastError: "drag a box first to compare shifts" });
      return;
    }
    if (validateLayout(base, this.state.vocab).length > 0) {
      this.update({ ...this.state, lastError: "comparison layout is invalid" });
      return;
    }
    const inner = buildRequest({ ...this.state, layout: base }, "shifted-pair");
    if (!inner) {
      this.update({ ...this.state, lastError: "invalid layout" });
      return;
    }
    const req: PairRequest = { v: 1, request: inner, shifts: { dx: shifts, policy: "clamp" } };
    const resp = await this.client.generatePair(req);
    this.update(applyPairResponse(this.state, resp));
  }
}

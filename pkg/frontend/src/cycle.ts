// Cleaning-cycle control: start the job, poll its status, keep the button
// disabled while anything runs, surface 409/failures verbatim.

import { ApiClient, ApiError } from "./api.js";
import { describeError } from "./state.js";
import type { JobDto } from "./types.js";

export type CycleState = "idle" | "running" | "failed";

export class CycleController {
  state: CycleState = "idle";
  lastError: string | null = null;
  lastResult: Record<string, unknown> | null = null;
  private listeners: Array<() => void> = [];

  constructor(
    private api: ApiClient,
    private sleep: (ms: number) => Promise<void> = (ms) =>
      new Promise((resolve) => setTimeout(resolve, ms)),
    private pollMs = 250,
  ) {}

  onChange(fn: () => void): void {
    this.listeners.push(fn);
  }

  private emit(): void {
    for (const fn of this.listeners) fn();
  }

  /** The cycle button is disabled exactly while this is true. */
  get busy(): boolean {
    return this.state === "running";
  }

  async start(body: Record<string, unknown> = {}): Promise<JobDto | null> {
    if (this.busy) {
      return null; // button should be disabled; ignore double-clicks
    }
    this.state = "running";
    this.lastError = null;
    this.emit();
    let job: JobDto;
    try {
      job = await this.api.postCycle(body);
    } catch (err) {
      // a 409 means a cycle is already running (e.g. another tab): surface it
      this.state = err instanceof ApiError && err.status === 409 ? "running" : "failed";
      this.lastError = describeError(err);
      this.emit();
      return null;
    }
    while (job.status === "queued" || job.status === "running") {
      await this.sleep(this.pollMs);
      job = await this.api.getJob(job.id);
    }
    if (job.status === "failed") {
      this.state = "failed";
      this.lastError = job.error ?? "cycle failed";
    } else {
      this.state = "idle";
      this.lastResult = job.result;
    }
    this.emit();
    return job;
  }

  /** Re-enable after an external 409 once the foreign job finished. */
  reset(): void {
    this.state = "idle";
    this.emit();
  }
}

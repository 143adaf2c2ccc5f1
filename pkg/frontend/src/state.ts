// Flag store with optimistic updates and server reconciliation. Analysts flag
// rapidly; the UI applies the change immediately, serializes the server calls
// (journal order stays human-meaningful), and reverts + notifies on rejection.

import { ApiClient, ApiError } from "./api.js";
import type { FlagDto, FlagRequest } from "./types.js";

export interface Notice {
  kind: "reverted" | "info";
  message: string;
}

export function validateFlag(req: FlagRequest): string | null {
  if (req.reason === "mislabeled" && !req.corrected_label) {
    return "a mislabeled flag needs a corrected label";
  }
  if (req.reason === "ambiguous" && req.corrected_label) {
    return "an ambiguous flag cannot carry a corrected label";
  }
  if (req.corrected_label === "undecidable") {
    return "corrected label must be up or down";
  }
  return null;
}

export class FlagStore {
  private flags = new Map<string, FlagDto>();
  private queue: Promise<unknown> = Promise.resolve();
  private listeners: Array<() => void> = [];
  private notices: Notice[] = [];

  constructor(private api: ApiClient) {}

  onChange(fn: () => void): void {
    this.listeners.push(fn);
  }

  private emit(): void {
    for (const fn of this.listeners) fn();
  }

  get(traceId: string): FlagDto | undefined {
    return this.flags.get(traceId);
  }

  isFlagged(traceId: string): boolean {
    return this.flags.has(traceId);
  }

  get size(): number {
    return this.flags.size;
  }

  ids(): string[] {
    return [...this.flags.keys()];
  }

  consumeNotices(): Notice[] {
    const out = this.notices;
    this.notices = [];
    return out;
  }

  /** Server state wins wholesale; used at startup and after reloads. */
  reconcile(server: Record<string, FlagDto>): void {
    this.flags = new Map(Object.entries(server));
    this.emit();
  }

  async refresh(): Promise<void> {
    const resp = await this.api.getFlags();
    this.reconcile(resp.flags);
  }

  /** Serialize mutations so journal ordering follows the analyst's actions. */
  private enqueue<T>(work: () => Promise<T>): Promise<T> {
    const next = this.queue.then(work, work);
    this.queue = next.catch(() => undefined);
    return next;
  }

  flag(req: FlagRequest): Promise<"committed" | "reverted"> {
    const problem = validateFlag(req);
    if (problem) {
      return Promise.reject(new Error(problem));
    }
    const previous = this.flags.get(req.trace_id);
    const optimistic: FlagDto = {
      trace_id: req.trace_id,
      reason: req.reason,
      corrected_label: req.corrected_label ?? null,
      cycle: -1, // provisional until the server echoes the entry
      author: req.author ?? "analyst",
      timestamp: Date.now() / 1000,
      bin_side: req.bin_side ?? null,
    };
    this.flags.set(req.trace_id, optimistic);
    this.emit();
    return this.enqueue(async () => {
      try {
        const committed = await this.api.postFlag(req);
        this.flags.set(req.trace_id, committed);
        this.emit();
        return "committed" as const;
      } catch (err) {
        if (previous === undefined) {
          this.flags.delete(req.trace_id);
        } else {
          this.flags.set(req.trace_id, previous);
        }
        this.notices.push({
          kind: "reverted",
          message: `flag ${req.trace_id}: ${describeError(err)}`,
        });
        this.emit();
        return "reverted" as const;
      }
    });
  }

  unflag(traceId: string): Promise<"committed" | "reverted"> {
    const previous = this.flags.get(traceId);
    if (previous === undefined) {
      return Promise.resolve("committed");
    }
    this.flags.delete(traceId);
    this.emit();
    return this.enqueue(async () => {
      try {
        await this.api.deleteFlag(traceId);
        return "committed" as const;
      } catch (err) {
        this.flags.set(traceId, previous);
        this.notices.push({
          kind: "reverted",
          message: `unflag ${traceId}: ${describeError(err)}`,
        });
        this.emit();
        return "reverted" as const;
      }
    });
  }
}

export function describeError(err: unknown): string {
  if (err instanceof ApiError) {
    const detail = (err.body as { detail?: unknown })?.detail;
    return `HTTP ${err.status} ${typeof detail === "string" ? detail : JSON.stringify(detail)}`;
  }
  return String(err);
}

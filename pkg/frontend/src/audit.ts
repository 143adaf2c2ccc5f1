// Extremal-bin audit screen: page through sampled waveforms and record
// Up/Down/Undecidable verdicts; every flag-producing verdict is journaled
// with the bin side it came from.

import { ApiClient } from "./api.js";
import { verdictToFlag } from "./nodeDetail.js";
import { FlagStore } from "./state.js";
import type { AuditCard, Label } from "./types.js";

export class AuditController {
  bin: "left" | "right" = "right";
  k = 40;
  cards: AuditCard[] = [];
  nInBin = 0;
  marker = 0;

  constructor(
    private api: ApiClient,
    private store: FlagStore,
  ) {}

  async load(bin: "left" | "right", k: number, seed = 0): Promise<void> {
    const resp = await this.api.getAudit(bin, k, seed);
    this.bin = resp.bin;
    this.k = resp.k;
    this.cards = resp.waveforms;
    this.nInBin = resp.n_in_bin;
    this.marker = resp.p_marker;
  }

  /**
   * Record a verdict. A verdict that contradicts the stored label files a
   * mislabel flag with the corrected label; "undecidable" files an ambiguity
   * flag; a confirming verdict journals nothing.
   */
  async submitVerdict(card: AuditCard, verdict: Label): Promise<"flagged" | "confirmed" | "reverted"> {
    const req = verdictToFlag(card.trace_id, card.label, verdict, this.bin);
    if (req === null) {
      return "confirmed";
    }
    const outcome = await this.store.flag(req);
    return outcome === "committed" ? "flagged" : "reverted";
  }
}

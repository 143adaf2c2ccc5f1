// JSON shapes of the review service API.

export type Reason = "mislabeled" | "ambiguous";
export type Label = "up" | "down" | "undecidable";

export interface FlagDto {
  trace_id: string;
  reason: Reason;
  corrected_label: Label | null;
  cycle: number;
  author: string;
  timestamp: number;
  bin_side: string | null;
}

export interface FlagsResponse {
  count: number;
  cycle: number;
  digest: string;
  flags: Record<string, FlagDto>;
}

export interface FlagRequest {
  trace_id: string;
  reason: Reason;
  corrected_label?: Label | null;
  author?: string;
  bin_side?: string | null;
}

export interface Polyline {
  idx: number[];
  val: number[];
}

export interface MapNode {
  row: number;
  col: number;
  count: number;
  purity: number | null;
  mean: Polyline | null;
}

export interface MapResponse {
  rows: number;
  cols: number;
  cycle: number;
  p_marker: number;
  window_len: number;
  nodes: MapNode[];
}

export interface NodeWaveform {
  trace_id: string;
  label: Label;
  idx: number[];
  val: number[];
  flag: FlagDto | null;
}

export interface NodeResponse {
  row: number;
  col: number;
  count: number;
  purity: number | null;
  p_marker: number;
  window_len: number;
  mean: Polyline | null;
  waveforms: NodeWaveform[];
}

export interface JobDto {
  id: string;
  kind: string;
  status: "queued" | "running" | "done" | "failed";
  error: string | null;
  result: Record<string, unknown> | null;
}

export interface AuditCard {
  trace_id: string;
  label: Label;
  mean_p: number;
  idx: number[];
  val: number[];
  flag: FlagDto | null;
}

export interface AuditResponse {
  bin: "left" | "right";
  k: number;
  p_marker: number;
  n_in_bin: number;
  waveforms: AuditCard[];
}

export interface HistogramArtifact {
  bin_count: number;
  edges: number[];
  counts: number[];
  n_total: number;
  metrics?: { extremal_mass: number; central_mass: number; entropy: number };
}

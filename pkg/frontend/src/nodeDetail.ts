// Node drill-down: overlaid member waveforms with the mean emphasized and a
// dashed vertical marker at the declared arrival sample; per-trace flag
// toggles and a bulk-flag action feed the store.

import type { FlagStore } from "./state.js";
import type { FlagRequest, Label, NodeResponse, NodeWaveform, Polyline } from "./types.js";

export interface WaveformVM {
  traceId: string;
  label: Label;
  poly: Polyline;
  flagged: boolean;
  reason: string | null;
  selected: boolean;
}

export interface NodeDetailVM {
  row: number;
  col: number;
  count: number;
  purity: number | null;
  marker: number;
  windowLen: number;
  mean: Polyline | null;
  waveforms: WaveformVM[];
}

export function buildNodeDetail(resp: NodeResponse, store: FlagStore): NodeDetailVM {
  return {
    row: resp.row,
    col: resp.col,
    count: resp.count,
    purity: resp.purity,
    marker: resp.p_marker,
    windowLen: resp.window_len,
    mean: resp.mean,
    waveforms: resp.waveforms.map((w) => ({
      traceId: w.trace_id,
      label: w.label,
      poly: { idx: w.idx, val: w.val },
      flagged: store.isFlagged(w.trace_id),
      reason: store.get(w.trace_id)?.reason ?? null,
      selected: false,
    })),
  };
}

/** Map sample index/value to canvas coordinates; values are max-abs
 * normalized so [-1, 1] spans 90% of the height. */
export function projectPolyline(
  poly: Polyline,
  windowLen: number,
  width: number,
  height: number,
): Array<[number, number]> {
  const sx = width / Math.max(1, windowLen - 1);
  return poly.idx.map((sample, i) => [
    sample * sx,
    height / 2 - poly.val[i] * (height / 2) * 0.9,
  ]);
}

export function markerX(marker: number, windowLen: number, width: number): number {
  return marker * (width / Math.max(1, windowLen - 1));
}

type Ctx2D = Pick<
  CanvasRenderingContext2D,
  "clearRect" | "beginPath" | "moveTo" | "lineTo" | "stroke" | "setLineDash" | "fillRect"
> & { strokeStyle: string | CanvasGradient | CanvasPattern; lineWidth: number; fillStyle: string | CanvasGradient | CanvasPattern };

function drawPolyline(ctx: Ctx2D, pts: Array<[number, number]>): void {
  ctx.beginPath();
  pts.forEach(([x, y], i) => (i === 0 ? ctx.moveTo(x, y) : ctx.lineTo(x, y)));
  ctx.stroke();
}

export function renderOverlay(
  ctx: Ctx2D,
  vm: NodeDetailVM,
  width: number,
  height: number,
  amplitudeScale = 1.0,
): void {
  ctx.clearRect(0, 0, width, height);
  ctx.fillStyle = "#ffffff";
  ctx.fillRect(0, 0, width, height);
  ctx.setLineDash([]);
  for (const w of vm.waveforms) {
    ctx.strokeStyle = w.flagged ? "rgba(200, 60, 40, 0.55)" : "rgba(70, 110, 170, 0.35)";
    ctx.lineWidth = 1;
    const scaled = {
      idx: w.poly.idx,
      val: w.poly.val.map((v) => v * amplitudeScale),
    };
    drawPolyline(ctx, projectPolyline(scaled, vm.windowLen, width, height));
  }
  if (vm.mean) {
    ctx.strokeStyle = "#111";
    ctx.lineWidth = 2;
    const scaled = { idx: vm.mean.idx, val: vm.mean.val.map((v) => v * amplitudeScale) };
    drawPolyline(ctx, projectPolyline(scaled, vm.windowLen, width, height));
  }
  // declared arrival: dashed vertical line
  const mx = markerX(vm.marker, vm.windowLen, width);
  ctx.strokeStyle = "#444";
  ctx.lineWidth = 1;
  ctx.setLineDash([5, 4]);
  ctx.beginPath();
  ctx.moveTo(mx, 0);
  ctx.lineTo(mx, height);
  ctx.stroke();
  ctx.setLineDash([]);
}

export function oppositeLabel(label: Label): Label {
  return label === "up" ? "down" : "up";
}

/** Turn an analyst verdict on a trace into a flag request, or null when the
 * verdict just confirms the current label (nothing to journal). */
export function verdictToFlag(
  traceId: string,
  currentLabel: Label,
  verdict: Label,
  binSide: string | null = null,
): FlagRequest | null {
  if (verdict === "undecidable") {
    return { trace_id: traceId, reason: "ambiguous", bin_side: binSide };
  }
  if (verdict === currentLabel) {
    return null;
  }
  return {
    trace_id: traceId,
    reason: "mislabeled",
    corrected_label: verdict,
    bin_side: binSide,
  };
}

/** Bulk-flag every selected waveform with one reason (+ corrected label). */
export function bulkFlagRequests(
  vm: NodeDetailVM,
  reason: "mislabeled" | "ambiguous",
  correctedLabel: Label | null,
): FlagRequest[] {
  return vm.waveforms
    .filter((w) => w.selected)
    .map((w) => ({
      trace_id: w.traceId,
      reason,
      corrected_label: reason === "mislabeled" ? correctedLabel : null,
    }));
}

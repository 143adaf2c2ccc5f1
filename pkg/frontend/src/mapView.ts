// SOM map as a canvas heatmap grid: cell color = label purity, marker size =
// member count. Geometry and hit-testing are pure so they can be tested
// without a canvas.

import { countRadius, purityColor } from "./colors.js";
import type { FlagStore } from "./state.js";
import type { MapResponse } from "./types.js";

export interface MapCellVM {
  row: number;
  col: number;
  count: number;
  purity: number | null;
  flagged: number; // members currently flagged (via store), shown as a badge
}

export interface MapViewModel {
  rows: number;
  cols: number;
  cycle: number;
  maxCount: number;
  cells: MapCellVM[];
}

export function buildMapViewModel(
  map: MapResponse,
  flaggedIdsPerNode?: Map<string, number>,
): MapViewModel {
  const cells = map.nodes.map((n) => ({
    row: n.row,
    col: n.col,
    count: n.count,
    purity: n.purity,
    flagged: flaggedIdsPerNode?.get(`${n.row}:${n.col}`) ?? 0,
  }));
  return {
    rows: map.rows,
    cols: map.cols,
    cycle: map.cycle,
    maxCount: Math.max(1, ...cells.map((c) => c.count)),
    cells,
  };
}

export interface GridLayout {
  cellPx: number;
  width: number;
  height: number;
}

export function layoutGrid(vm: MapViewModel, maxWidthPx: number): GridLayout {
  const cellPx = Math.floor(Math.min(maxWidthPx / vm.cols, 72));
  return { cellPx, width: cellPx * vm.cols, height: cellPx * vm.rows };
}

/** Returns the cell under (x, y), or null when outside or empty (an empty
 * node renders but is not clickable). */
export function hitTest(
  vm: MapViewModel,
  layout: GridLayout,
  x: number,
  y: number,
): MapCellVM | null {
  if (x < 0 || y < 0 || x >= layout.width || y >= layout.height) {
    return null;
  }
  const col = Math.floor(x / layout.cellPx);
  const row = Math.floor(y / layout.cellPx);
  const cell = vm.cells[row * vm.cols + col];
  if (!cell || cell.count === 0) {
    return null;
  }
  return cell;
}

type Ctx2D = Pick<
  CanvasRenderingContext2D,
  | "clearRect"
  | "fillRect"
  | "beginPath"
  | "arc"
  | "fill"
  | "strokeRect"
  | "fillText"
> & { fillStyle: string | CanvasGradient | CanvasPattern; strokeStyle: string | CanvasGradient | CanvasPattern; font: string };

export function renderMap(ctx: Ctx2D, vm: MapViewModel, layout: GridLayout): void {
  ctx.clearRect(0, 0, layout.width, layout.height);
  ctx.fillStyle = "#fafafa";
  ctx.fillRect(0, 0, layout.width, layout.height);
  for (const cell of vm.cells) {
    const x0 = cell.col * layout.cellPx;
    const y0 = cell.row * layout.cellPx;
    ctx.strokeStyle = "#ddd";
    ctx.strokeRect(x0, y0, layout.cellPx, layout.cellPx);
    const r = countRadius(cell.count, vm.maxCount, layout.cellPx);
    if (r > 0) {
      ctx.fillStyle = purityColor(cell.purity);
      ctx.beginPath();
      ctx.arc(x0 + layout.cellPx / 2, y0 + layout.cellPx / 2, r, 0, Math.PI * 2);
      ctx.fill();
    }
    if (cell.flagged > 0) {
      ctx.fillStyle = "#222";
      ctx.font = "10px sans-serif";
      ctx.fillText(`${cell.flagged}⚑`, x0 + 3, y0 + 12);
    }
  }
}

/** Count flagged members per node from a node->ids index and the flag store. */
export function flaggedPerNode(
  memberIds: Map<string, string[]>,
  store: FlagStore,
): Map<string, number> {
  const out = new Map<string, number>();
  for (const [key, ids] of memberIds) {
    out.set(key, ids.filter((id) => store.isFlagged(id)).length);
  }
  return out;
}

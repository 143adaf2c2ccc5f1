// Purity -> hue and count -> size scales for the SOM map.

/** 0 (all Down) is deep blue, 1 (all Up) is red; null purity is neutral gray. */
export function purityColor(purity: number | null): string {
  if (purity === null) {
    return "hsl(0, 0%, 62%)";
  }
  const clamped = Math.max(0, Math.min(1, purity));
  const hue = 220 - clamped * 210; // 220 (blue) .. 10 (red)
  return `hsl(${hue.toFixed(0)}, 72%, 48%)`;
}

/** Marker radius in px: sqrt scaling so area tracks member count. */
export function countRadius(count: number, maxCount: number, cellPx: number): number {
  if (count <= 0 || maxCount <= 0) {
    return 0;
  }
  const max = cellPx * 0.42;
  const min = Math.min(3, max);
  return Math.max(min, max * Math.sqrt(count / maxCount));
}

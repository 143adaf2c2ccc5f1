// Single-page bootstrap: hash routing between the map, node drill-down and
// the audit screen. The server is the single source of truth; every screen
// re-renders from fetched state plus the flag store.

import { ApiClient, ApiError } from "./api.js";
import { AuditController } from "./audit.js";
import { CycleController } from "./cycle.js";
import {
  buildMapViewModel,
  flaggedPerNode,
  hitTest,
  layoutGrid,
  renderMap,
} from "./mapView.js";
import {
  buildNodeDetail,
  bulkFlagRequests,
  renderOverlay,
  verdictToFlag,
} from "./nodeDetail.js";
import { FlagStore, describeError } from "./state.js";
import type { Label, MapResponse, NodeResponse } from "./types.js";

const api = new ApiClient("");
const store = new FlagStore(api);
const cycle = new CycleController(api);

const root = document.getElementById("app") as HTMLElement;
let lastMap: MapResponse | null = null;
const nodeMembers = new Map<string, string[]>();

function el<K extends keyof HTMLElementTagNameMap>(
  tag: K,
  attrs: Record<string, string> = {},
  ...children: Array<Node | string>
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  for (const [k, v] of Object.entries(attrs)) {
    if (k === "class") node.className = v;
    else node.setAttribute(k, v);
  }
  node.append(...children);
  return node;
}

function banner(message: string, retry: () => void): HTMLElement {
  const b = el("div", { class: "banner" }, message, " ");
  const btn = el("button", {}, "retry");
  btn.onclick = retry;
  b.append(btn);
  return b;
}

function noticeBar(): HTMLElement {
  const box = el("div", { class: "notices" });
  for (const n of store.consumeNotices()) {
    box.append(el("div", { class: `notice ${n.kind}` }, n.message));
  }
  return box;
}

function header(title: string): HTMLElement {
  const nav = el(
    "div",
    { class: "header" },
    el("span", { class: "title" }, title),
    el("a", { href: "#map" }, "map"),
    el("a", { href: "#audit/right" }, "audit right bin"),
    el("a", { href: "#audit/left" }, "audit left bin"),
  );
  const cycleBtn = el("button", { class: "cycle" }) as HTMLButtonElement;
  const paint = () => {
    cycleBtn.textContent = cycle.busy ? "cycle running…" : "run cleaning cycle";
    cycleBtn.disabled = cycle.busy;
  };
  paint();
  cycle.onChange(paint);
  cycleBtn.onclick = async () => {
    await cycle.start();
    if (cycle.lastError) {
      root.prepend(el("div", { class: "notice reverted" }, `cycle: ${cycle.lastError}`));
    } else {
      await route(); // fresh map after the retrain
    }
  };
  nav.append(cycleBtn);
  if (cycle.lastResult) {
    nav.append(
      el("span", { class: "muted" }, ` last cycle: ${JSON.stringify(cycle.lastResult)}`),
    );
  }
  return nav;
}

async function showMap(): Promise<void> {
  root.replaceChildren(header("SOM map"), noticeBar());
  let map: MapResponse;
  try {
    map = await api.getMap();
    await store.refresh();
  } catch (err) {
    if (err instanceof ApiError && err.status === 404) {
      root.append(
        el("p", {}, "No SOM trained yet — run the first cleaning cycle."),
      );
      return;
    }
    root.append(banner(`map unavailable: ${describeError(err)}`, () => void showMap()));
    return;
  }
  lastMap = map;
  const vm = buildMapViewModel(map, flaggedPerNode(nodeMembers, store));
  const layout = layoutGrid(vm, Math.min(root.clientWidth || 720, 720));
  const canvas = el("canvas", {
    width: String(layout.width),
    height: String(layout.height),
  }) as HTMLCanvasElement;
  const ctx = canvas.getContext("2d");
  if (ctx) renderMap(ctx, vm, layout);
  canvas.onclick = (ev) => {
    const rect = canvas.getBoundingClientRect();
    const cell = hitTest(vm, layout, ev.clientX - rect.left, ev.clientY - rect.top);
    if (cell) {
      location.hash = `#node/${cell.row}/${cell.col}`;
    }
  };
  root.append(
    el("p", { class: "muted" }, `cycle ${map.cycle}; click a node to inspect members`),
    canvas,
    el(
      "div",
      { class: "legend" },
      el("span", { class: "chip down" }, "purity 0 (down)"),
      el("span", { class: "chip mid" }, "0.5"),
      el("span", { class: "chip up" }, "purity 1 (up)"),
      el("span", { class: "chip neutral" }, "empty"),
    ),
  );
}

async function showNode(row: number, col: number): Promise<void> {
  root.replaceChildren(header(`node ${row},${col}`), noticeBar());
  let resp: NodeResponse;
  try {
    resp = await api.getNodeWaveforms(row, col, 120);
    await store.refresh();
  } catch (err) {
    root.append(
      banner(`node unavailable: ${describeError(err)}`, () => void showNode(row, col)),
    );
    return;
  }
  nodeMembers.set(`${row}:${col}`, resp.waveforms.map((w) => w.trace_id));
  const vm = buildNodeDetail(resp, store);
  const canvas = el("canvas", { width: "720", height: "260" }) as HTMLCanvasElement;
  let amplitude = 1.0;
  const repaint = () => {
    const ctx = canvas.getContext("2d");
    if (ctx) renderOverlay(ctx, buildNodeDetail(resp, store), 720, 260, amplitude);
  };
  repaint();
  store.onChange(repaint);
  const zoom = el("input", {
    type: "range", min: "0.2", max: "4", step: "0.1", value: "1",
  }) as HTMLInputElement;
  zoom.oninput = () => {
    amplitude = Number(zoom.value);
    repaint();
  };

  const list = el("div", { class: "members" });
  const selected = new Set<string>();
  for (const w of vm.waveforms) {
    const check = el("input", { type: "checkbox" }) as HTMLInputElement;
    check.onchange = () => (check.checked ? selected.add(w.traceId) : selected.delete(w.traceId));
    const toggle = el("button", {}, w.flagged ? "unflag" : "flag ambiguous") as HTMLButtonElement;
    toggle.onclick = async () => {
      if (store.isFlagged(w.traceId)) {
        await store.unflag(w.traceId);
      } else {
        await store.flag({ trace_id: w.traceId, reason: "ambiguous" });
      }
      await showNode(row, col);
    };
    list.append(
      el(
        "div",
        { class: "member" },
        check,
        el("span", { class: "mono" }, w.traceId),
        el("span", { class: `label ${w.label}` }, w.label),
        store.isFlagged(w.traceId)
          ? el("span", { class: "flagged" }, `⚑ ${store.get(w.traceId)?.reason}`)
          : "",
        toggle,
      ),
    );
  }

  const reasonSel = el("select", {},
    el("option", { value: "ambiguous" }, "ambiguous"),
    el("option", { value: "mislabeled" }, "mislabeled"),
  ) as HTMLSelectElement;
  const labelSel = el("select", {},
    el("option", { value: "" }, "corrected label…"),
    el("option", { value: "up" }, "up"),
    el("option", { value: "down" }, "down"),
  ) as HTMLSelectElement;
  const bulkBtn = el("button", {}, "bulk-flag selected") as HTMLButtonElement;
  bulkBtn.onclick = async () => {
    const detail = buildNodeDetail(resp, store);
    detail.waveforms.forEach((w) => (w.selected = selected.has(w.traceId)));
    const reason = reasonSel.value as "ambiguous" | "mislabeled";
    const corrected = (labelSel.value || null) as Label | null;
    if (reason === "mislabeled" && !corrected) {
      root.prepend(el("div", { class: "notice reverted" },
        "bulk flag blocked: mislabeled needs a corrected label"));
      return;
    }
    for (const req of bulkFlagRequests(detail, reason, corrected)) {
      await store.flag(req);
    }
    await showNode(row, col);
  };

  root.append(
    el("p", { class: "muted" },
      `${vm.count} members, purity ${vm.purity === null ? "n/a" : vm.purity.toFixed(2)};` +
      " dashed line marks the declared arrival"),
    canvas,
    el("div", {}, "amplitude ", zoom),
    el("div", { class: "bulk" }, reasonSel, labelSel, bulkBtn),
    list,
  );
}

async function showAudit(bin: "left" | "right"): Promise<void> {
  root.replaceChildren(header(`audit ${bin} extremal bin`), noticeBar());
  const audit = new AuditController(api, store);
  try {
    await audit.load(bin, 40);
    await store.refresh();
  } catch (err) {
    root.append(
      banner(`audit unavailable: ${describeError(err)}`, () => void showAudit(bin)),
    );
    return;
  }
  root.append(el("p", { class: "muted" },
    `${audit.nInBin} windows in the ${bin} bin; showing ${audit.cards.length}`));
  const grid = el("div", { class: "cards" });
  for (const card of audit.cards) {
    const canvas = el("canvas", { width: "220", height: "80" }) as HTMLCanvasElement;
    const ctx = canvas.getContext("2d");
    if (ctx) {
      renderOverlay(
        ctx,
        {
          row: 0, col: 0, count: 1, purity: null,
          marker: audit.marker,
          windowLen: Math.max(...card.idx) + 1,
          mean: null,
          waveforms: [{
            traceId: card.trace_id, label: card.label,
            poly: { idx: card.idx, val: card.val },
            flagged: store.isFlagged(card.trace_id),
            reason: null, selected: false,
          }],
        },
        220, 80,
      );
    }
    const verdictRow = el("div", { class: "verdicts" });
    for (const verdict of ["up", "down", "undecidable"] as Label[]) {
      const btn = el("button", {}, verdict) as HTMLButtonElement;
      btn.onclick = async () => {
        const outcome = await audit.submitVerdict(card, verdict);
        btn.after(el("span", { class: "muted" }, ` ${outcome}`));
      };
      verdictRow.append(btn);
    }
    grid.append(
      el("div", { class: "card" },
        el("div", { class: "mono" }, `${card.trace_id} p=${card.mean_p.toFixed(3)}`),
        canvas,
        verdictRow,
      ),
    );
  }
  root.append(grid);
}

async function route(): Promise<void> {
  const hash = location.hash || "#map";
  const nodeMatch = hash.match(/^#node\/(\d+)\/(\d+)$/);
  const auditMatch = hash.match(/^#audit\/(left|right)$/);
  if (nodeMatch) {
    await showNode(Number(nodeMatch[1]), Number(nodeMatch[2]));
  } else if (auditMatch) {
    await showAudit(auditMatch[1] as "left" | "right");
  } else {
    await showMap();
  }
}

window.addEventListener("hashchange", () => void route());
void route();

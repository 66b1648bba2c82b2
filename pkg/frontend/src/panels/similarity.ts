/** Two similarity heatmaps (generated weights vs data) with a shared
 * member ordering, hover tooltips carrying the member parameters, and the
 * triplet agreement score. */
import { Meta, SimilarityResponse } from "../api.js";
import { paint, similarityColor } from "../colormap.js";

const CELL = 14;

export class SimilarityView {
  readonly root: HTMLElement;
  readonly tooltip: HTMLElement;

  constructor(private meta: Meta) {
    this.root = document.createElement("div");
    this.root.className = "similarity-view";
    this.root.style.display = "none";
    this.tooltip = document.createElement("div");
    this.tooltip.className = "tooltip";
    this.tooltip.style.display = "none";
  }

  show(sim: SimilarityResponse): void {
    this.root.style.display = "";
    this.root.textContent = "";
    const score = document.createElement("div");
    score.className = "triplet-score";
    score.textContent = `triplet agreement: ${(100 * sim.triplet_correlation).toFixed(1)}%`;
    this.root.appendChild(score);
    const row = document.createElement("div");
    row.className = "panes";
    row.appendChild(this.heatmap("generated-weight similarity", sim.member_ids, sim.weight));
    row.appendChild(this.heatmap("data similarity", sim.member_ids, sim.data));
    this.root.appendChild(row);
    this.root.appendChild(this.tooltip);
  }

  hide(): void {
    this.root.style.display = "none";
  }

  private heatmap(title: string, ids: string[], values: number[][]): HTMLElement {
    const n = ids.length;
    const fig = document.createElement("figure");
    fig.className = "heatmap";
    const canvas = document.createElement("canvas");
    const rgba = new Uint8ClampedArray(n * CELL * n * CELL * 4);
    for (let i = 0; i < n; i++) {
      for (let j = 0; j < n; j++) {
        const [r, g, b] = similarityColor(values[i][j]);
        for (let py = 0; py < CELL; py++) {
          for (let px = 0; px < CELL; px++) {
            const o = 4 * ((i * CELL + py) * n * CELL + j * CELL + px);
            rgba[o] = r;
            rgba[o + 1] = g;
            rgba[o + 2] = b;
            rgba[o + 3] = 255;
          }
        }
      }
    }
    paint(canvas, rgba, n * CELL, n * CELL);
    canvas.addEventListener("mousemove", (ev) => {
      const i = Math.floor((ev as MouseEvent).offsetY / CELL);
      const j = Math.floor((ev as MouseEvent).offsetX / CELL);
      if (i < 0 || j < 0 || i >= n || j >= n) return;
      this.tooltip.style.display = "block";
      this.tooltip.textContent =
        `${ids[i]} ${this.describe(ids[i])}  x  ${ids[j]} ${this.describe(ids[j])}` +
        `  ->  ${values[i][j].toFixed(4)}`;
    });
    canvas.addEventListener("mouseleave", () => {
      this.tooltip.style.display = "none";
    });
    const cap = document.createElement("figcaption");
    cap.textContent = title;
    fig.append(canvas, cap);
    return fig;
  }

  private describe(id: string): string {
    const m = this.meta.members.find((mm) => mm.id === id);
    if (!m) return "";
    const parts = this.meta.param_names.map((n) => `${n}=${m.params[n]}`);
    return `(${parts.join(", ")})`;
  }
}

/** Side-by-side density and flow slice panes with axis/index controls and
 * the server-reported PSNR readout. */
import { InferResponse, decodeF32 } from "../api.js";
import { densityRgba, flowRgba, paint } from "../colormap.js";

export class SliceViewer {
  readonly root: HTMLElement;
  readonly densityCanvas: HTMLCanvasElement;
  readonly flowCanvas: HTMLCanvasElement;
  private psnrLabel: HTMLElement;
  private indexSlider: HTMLInputElement;
  private axisSelect: HTMLSelectElement;

  constructor(
    private dims: number[],
    private onView: (axis: string, index: number) => void,
  ) {
    this.root = document.createElement("div");
    this.root.className = "slice-viewer";

    const controls = document.createElement("div");
    controls.className = "row slice-controls";
    this.axisSelect = document.createElement("select");
    this.axisSelect.className = "axis-select";
    for (const ax of ["x", "y", "z"]) {
      const opt = document.createElement("option");
      opt.value = ax;
      opt.textContent = ax;
      this.axisSelect.appendChild(opt);
    }
    this.axisSelect.value = "z";
    this.indexSlider = document.createElement("input");
    this.indexSlider.type = "range";
    this.indexSlider.className = "index-slider";
    this.configureIndexRange("z");
    this.axisSelect.addEventListener("change", () => {
      this.configureIndexRange(this.axisSelect.value);
      this.emit();
    });
    this.indexSlider.addEventListener("input", () => this.emit());
    controls.append("axis ", this.axisSelect, " slice ", this.indexSlider);
    this.root.appendChild(controls);

    const panes = document.createElement("div");
    panes.className = "panes";
    this.densityCanvas = document.createElement("canvas");
    this.densityCanvas.className = "density-pane";
    this.flowCanvas = document.createElement("canvas");
    this.flowCanvas.className = "flow-pane";
    const left = document.createElement("figure");
    left.append(this.densityCanvas, captionEl("density"));
    const right = document.createElement("figure");
    right.append(this.flowCanvas, captionEl("flow (rgb = xyz)"));
    panes.append(left, right);
    this.root.appendChild(panes);

    this.psnrLabel = document.createElement("div");
    this.psnrLabel.className = "psnr-readout";
    this.root.appendChild(this.psnrLabel);
  }

  private extentFor(axis: string): number {
    return { x: this.dims[0], y: this.dims[1], z: this.dims[2] }[axis as "x" | "y" | "z"];
  }

  private configureIndexRange(axis: string): void {
    const ext = this.extentFor(axis);
    this.indexSlider.min = "0";
    this.indexSlider.max = String(ext - 1);
    const clamped = Math.min(Number(this.indexSlider.value || 0), ext - 1);
    this.indexSlider.value = String(Number.isFinite(clamped) ? clamped : Math.floor(ext / 2));
  }

  get axis(): string {
    return this.axisSelect.value;
  }

  get index(): number {
    return Number(this.indexSlider.value);
  }

  private emit(): void {
    this.onView(this.axis, this.index);
  }

  show(resp: InferResponse): void {
    const d = resp.density_slice;
    paint(this.densityCanvas, densityRgba(decodeF32(d.data)), d.width, d.height);
    const f = resp.flow_slice;
    const [fx, fy, fz] = f.components.map(decodeF32);
    paint(this.flowCanvas, flowRgba(fx, fy, fz, 0.5), f.width, f.height);
    if (resp.psnr_vs_gt === undefined) {
      this.psnrLabel.textContent = "";
    } else if (resp.psnr_vs_gt === null) {
      this.psnrLabel.textContent = "PSNR vs GT: inf";
    } else {
      this.psnrLabel.textContent = `PSNR vs GT: ${resp.psnr_vs_gt.toFixed(2)} dB`;
    }
  }

  showError(message: string): void {
    this.psnrLabel.textContent = `error: ${message}`;
  }
}

function captionEl(text: string): HTMLElement {
  const c = document.createElement("figcaption");
  c.textContent = text;
  return c;
}

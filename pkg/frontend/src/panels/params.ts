/** Parameter panel: one slider per simulation parameter, member and
 * timestep pickers, an out-of-range extension toggle for extrapolation,
 * and a sweep mode that fans one parameter into five columns. */
import { Meta } from "../api.js";

export interface PanelState {
  memberId: string;
  s: number;
  u: number;
  t: number;
  params: number[];
  axis: string;
  index: number;
}

const EXTEND_FACTOR = 0.5; // widen each range by 50% per side when extended

export class ParamPanel {
  readonly root: HTMLElement;
  state: PanelState;
  sweepParam: string | null = null;
  private sliders: HTMLInputElement[] = [];
  private readouts: HTMLElement[] = [];
  private badge: HTMLElement;
  private extended = false;

  constructor(
    private meta: Meta,
    private onChange: (state: PanelState) => void,
    private onSweepToggle: (param: string | null) => void,
  ) {
    const member = meta.members[0];
    this.state = {
      memberId: member.id,
      s: 0,
      u: Math.min(4, member.timesteps - 1),
      t: 2,
      params: meta.param_names.map((n) => member.params[n]),
      axis: "z",
      index: Math.floor(meta.dims[2] / 2),
    };
    this.root = document.createElement("div");
    this.root.className = "param-panel";
    this.badge = document.createElement("span");
    this.badge.className = "badge";
    this.build();
    this.refreshBadge();
  }

  private build(): void {
    const memberRow = document.createElement("div");
    memberRow.className = "row";
    const memberSel = document.createElement("select");
    memberSel.className = "member-select";
    for (const m of this.meta.members) {
      const opt = document.createElement("option");
      opt.value = m.id;
      opt.textContent = m.id;
      memberSel.appendChild(opt);
    }
    memberSel.addEventListener("change", () => {
      this.state.memberId = memberSel.value;
      const m = this.meta.members.find((mm) => mm.id === memberSel.value)!;
      this.setParams(this.meta.param_names.map((n) => m.params[n]));
      this.emit();
    });
    memberRow.append("member ", memberSel, this.badge);
    this.root.appendChild(memberRow);

    for (const [label, key, max] of [
      ["s", "s", () => this.memberSteps() - 2],
      ["u", "u", () => this.memberSteps() - 1],
      ["t", "t", () => this.memberSteps() - 1],
    ] as const) {
      const row = document.createElement("div");
      row.className = "row";
      const input = document.createElement("input");
      input.type = "number";
      input.className = `pick-${key}`;
      input.value = String(this.state[key]);
      input.addEventListener("change", () => {
        const v = Math.max(0, Math.min(max(), Number(input.value)));
        (this.state as any)[key] = v;
        this.emit();
      });
      row.append(`${label} `, input);
      this.root.appendChild(row);
    }

    const extendRow = document.createElement("label");
    extendRow.className = "row extend-toggle";
    const extend = document.createElement("input");
    extend.type = "checkbox";
    extend.addEventListener("change", () => {
      this.extended = extend.checked;
      this.configureSliderRanges();
    });
    extendRow.append(extend, " allow out-of-range values");
    this.root.appendChild(extendRow);

    this.meta.param_names.forEach((name, i) => {
      const row = document.createElement("div");
      row.className = "row param-row";
      const slider = document.createElement("input");
      slider.type = "range";
      slider.className = `param-slider param-${name}`;
      const readout = document.createElement("span");
      readout.className = "param-value";
      slider.addEventListener("input", () => {
        this.state.params[i] = Number(slider.value);
        readout.textContent = Number(slider.value).toFixed(3);
        this.refreshBadge();
        this.emit();
      });
      const sweepBtn = document.createElement("button");
      sweepBtn.className = `sweep-btn sweep-${name}`;
      sweepBtn.textContent = "sweep";
      sweepBtn.addEventListener("click", () => {
        this.sweepParam = this.sweepParam === name ? null : name;
        this.onSweepToggle(this.sweepParam);
      });
      row.append(`${name} `, slider, readout, sweepBtn);
      this.root.appendChild(row);
      this.sliders.push(slider);
      this.readouts.push(readout);
    });
    this.configureSliderRanges();
    this.setParams(this.state.params);
  }

  private memberSteps(): number {
    return this.meta.members.find((m) => m.id === this.state.memberId)!.timesteps;
  }

  private configureSliderRanges(): void {
    this.meta.param_names.forEach((name, i) => {
      const [lo, hi] = this.meta.param_ranges[name];
      const pad = this.extended ? (hi - lo) * EXTEND_FACTOR : 0;
      this.sliders[i].min = String(lo - pad);
      this.sliders[i].max = String(hi + pad);
      this.sliders[i].step = String((hi - lo) / 100);
    });
  }

  setParams(values: number[]): void {
    values.forEach((v, i) => {
      this.state.params[i] = v;
      this.sliders[i].value = String(v);
      this.readouts[i].textContent = v.toFixed(3);
    });
    this.refreshBadge();
  }

  /** Visible when the current vector matches a training member exactly. */
  private refreshBadge(): void {
    const hit = this.meta.members.find(
      (m) =>
        this.meta.splits.train.includes(m.id) &&
        this.meta.param_names.every((n, i) => Math.abs(m.params[n] - this.state.params[i]) < 1e-12),
    );
    this.badge.textContent = hit ? `training member (${hit.id})` : "";
    this.badge.style.display = hit ? "inline" : "none";
  }

  /** Five evenly spaced values across the swept parameter's range. */
  sweepValues(name: string): number[] {
    const [lo, hi] = this.meta.param_ranges[name];
    return Array.from({ length: 5 }, (_, k) => lo + ((hi - lo) * k) / 4);
  }

  private emit(): void {
    this.onChange({ ...this.state, params: [...this.state.params] });
  }
}

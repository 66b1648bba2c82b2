/** Wires the panels to the inference service: a debounced what-if loop
 * where each slider move re-infers and each answer informs the next move. */
import { ApiClient, InferRequest, InferResponse, Meta } from "./api.js";
import { decodeF32 } from "./api.js";
import { densityRgba, paint } from "./colormap.js";
import { ParamPanel, PanelState } from "./panels/params.js";
import { SliceViewer } from "./panels/slice.js";
import { SimilarityView } from "./panels/similarity.js";
import { RequestLoop } from "./requests.js";

export interface App {
  panel: ParamPanel;
  viewer: SliceViewer;
  similarity: SimilarityView;
  loop: RequestLoop<InferRequest, InferResponse>;
  renderSweep: (state: PanelState) => Promise<void>;
}

export async function initApp(client: ApiClient, root: HTMLElement): Promise<App | null> {
  let meta: Meta;
  try {
    meta = await client.meta();
  } catch (err) {
    const banner = document.createElement("div");
    banner.className = "banner error";
    banner.textContent = `inference service unreachable: ${err}`;
    root.appendChild(banner);
    return null;
  }

  const layout = document.createElement("div");
  layout.className = "layout";
  root.appendChild(layout);

  const viewer = new SliceViewer(meta.dims, (axis, index) => {
    panel.state.axis = axis;
    panel.state.index = index;
    loop.request(toRequest(panel.state));
  });

  const loop = new RequestLoop<InferRequest, InferResponse>(
    (req) => client.infer(req),
    (resp) => viewer.show(resp),
    150,
    4,
    (err) => viewer.showError(String(err)),
  );

  const sweepStrip = document.createElement("div");
  sweepStrip.className = "sweep-strip";
  sweepStrip.style.display = "none";
  let sweepSeq = 0;

  const renderSweep = async (state: PanelState): Promise<void> => {
    if (!panel.sweepParam) return;
    const mySeq = ++sweepSeq;
    const name = panel.sweepParam;
    const values = panel.sweepValues(name);
    const pi = meta.param_names.indexOf(name);
    const responses = await Promise.all(
      values.map((v) => {
        const params = [...state.params];
        params[pi] = v;
        return client.infer({ ...toRequest(state), params });
      }),
    );
    if (mySeq !== sweepSeq) return; // a newer sweep superseded this one
    sweepStrip.textContent = "";
    responses.forEach((resp, k) => {
      const fig = document.createElement("figure");
      fig.className = "sweep-column";
      const canvas = document.createElement("canvas");
      const d = resp.density_slice;
      paint(canvas, densityRgba(decodeF32(d.data)), d.width, d.height);
      const cap = document.createElement("figcaption");
      cap.textContent = `${name} = ${values[k].toFixed(3)}`;
      fig.append(canvas, cap);
      sweepStrip.appendChild(fig);
    });
  };

  const panel = new ParamPanel(
    meta,
    (state) => {
      loop.request(toRequest(state));
      void renderSweep(state);
    },
    (sweepParam) => {
      sweepStrip.style.display = sweepParam ? "" : "none";
      if (sweepParam) void renderSweep(panel.state);
    },
  );

  const similarity = new SimilarityView(meta);
  try {
    const sim = await client.similarity();
    if (sim) similarity.show(sim);
    else similarity.hide();
  } catch {
    similarity.hide();
  }

  layout.appendChild(panel.root);
  const right = document.createElement("div");
  right.className = "main-column";
  right.append(viewer.root, sweepStrip, similarity.root);
  layout.appendChild(right);

  loop.request(toRequest(panel.state));
  loop.flush();
  return { panel, viewer, similarity, loop, renderSweep };
}

function toRequest(state: PanelState): InferRequest {
  return {
    member_id: state.memberId,
    s: state.s,
    u: state.u,
    t: state.t,
    params: [...state.params],
    axis: state.axis,
    index: state.index,
  };
}

declare global {
  interface Window {
    hflowExplorer?: Promise<App | null>;
  }
}

if (typeof document !== "undefined" && document.getElementById("hflow-root")) {
  window.hflowExplorer = initApp(new ApiClient(""), document.getElementById("hflow-root")!);
}

// Page assembly: fetch the interface description, build the widgets,
// and wire prediction and flagging to the two POST endpoints.

import { ApiError, fetchConfig, postFlag, postPredict } from "./api.js";
import { buildInputWidget, InputWidget, renderOutput } from "./components.js";
import type { Edit, InterfaceConfig, OutputValue, PredictResponse } from "./types.js";

export interface AppApi {
  predict(data: unknown[], edits: Edit[][]): Promise<PredictResponse>;
  flag(data: unknown[], output: unknown[], message: string, edits: Edit[][]): Promise<string>;
}

interface LastPrediction {
  data: unknown[];
  edits: Edit[][];
  output: OutputValue[];
}

function element<K extends keyof HTMLElementTagNameMap>(
  tag: K,
  className?: string,
  text?: string,
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  if (className) node.className = className;
  if (text !== undefined) node.textContent = text;
  return node;
}

export function buildApp(
  config: InterfaceConfig,
  mount: HTMLElement,
  api: AppApi = { predict: postPredict, flag: postFlag },
): void {
  mount.textContent = "";
  document.title = config.title;

  const header = element("header", "app-header");
  header.appendChild(element("h1", "app-title", config.title));
  if (config.description) {
    header.appendChild(element("p", "app-description", config.description));
  }
  if (config.share_url) {
    const share = element("div", "share-box");
    share.appendChild(element("span", "share-caption", "Share link: "));
    const url = element("input", "share-url") as HTMLInputElement;
    url.readOnly = true;
    url.value = config.share_url;
    url.addEventListener("focus", () => url.select());
    share.appendChild(url);
    header.appendChild(share);
  }
  const embed = element("details", "embed-box");
  embed.appendChild(element("summary", undefined, "Embed this interface"));
  const snippetUrl = config.share_url ?? (typeof location !== "undefined" ? location.href : "");
  const snippet = element("pre", "embed-snippet");
  snippet.textContent = `<iframe src="${snippetUrl}" width="100%" height="600" frameborder="0"></iframe>`;
  embed.appendChild(snippet);
  header.appendChild(embed);
  mount.appendChild(header);

  const columns = element("main", "columns");
  const inputColumn = element("div", "column inputs");
  inputColumn.appendChild(element("h2", "column-title", "Input"));
  const outputColumn = element("div", "column outputs");
  outputColumn.appendChild(element("h2", "column-title", "Output"));
  columns.appendChild(inputColumn);
  columns.appendChild(outputColumn);
  mount.appendChild(columns);

  const widgets: InputWidget[] = config.inputs.map((component) => {
    const widget = buildInputWidget(component);
    inputColumn.appendChild(widget.root);
    return widget;
  });
  // Debug/testing hook: lets tooling reach widget state through the DOM.
  (mount as HTMLElement & { __widgets?: InputWidget[] }).__widgets = widgets;

  const outputSlots: HTMLElement[] = config.outputs.map((component) => {
    const slot = element("section", "widget output-slot");
    slot.dataset.kind = component.kind;
    slot.appendChild(element("h3", "widget-label", component.label ?? component.kind));
    const body = element("div", "output-body", "—");
    slot.appendChild(body);
    outputColumn.appendChild(slot);
    return body;
  });

  // Example rows pre-supply inputs with one click.
  if (config.examples.length) {
    const strip = element("div", "examples");
    strip.appendChild(element("h2", "column-title", "Examples"));
    const tiles = element("div", "example-tiles");
    config.examples.forEach((row, index) => {
      const tile = element("button", "example-tile");
      const first = row[0] ?? "";
      if (typeof first === "string" && first.startsWith("data:image/")) {
        const thumb = element("img", "example-thumb") as HTMLImageElement;
        thumb.src = first;
        thumb.alt = `example ${index + 1}`;
        tile.appendChild(thumb);
      } else {
        tile.textContent = first.length > 40 ? first.slice(0, 37) + "..." : first || `example ${index + 1}`;
      }
      tile.addEventListener("click", () => {
        row.forEach((value, i) => widgets[i]?.setExample(value));
      });
      tiles.appendChild(tile);
    });
    strip.appendChild(tiles);
    inputColumn.appendChild(strip);
  }

  const actions = element("div", "actions");
  const submitButton = element("button", "submit", "Submit") as HTMLButtonElement;
  const durationLine = element("span", "duration", "");
  actions.appendChild(submitButton);
  actions.appendChild(durationLine);
  inputColumn.appendChild(actions);

  const errorPanel = element("div", "error-panel");
  errorPanel.hidden = true;
  mount.appendChild(errorPanel);

  const flagRow = element("div", "flag-row");
  const flagMessage = element("input", "flag-message") as HTMLInputElement;
  flagMessage.placeholder = "Optional message for the researcher";
  const flagButton = element("button", "flag", "Flag this result") as HTMLButtonElement;
  flagButton.disabled = true; // needs a rendered prediction first
  const flagStatus = element("span", "flag-status", "");
  flagRow.appendChild(flagMessage);
  flagRow.appendChild(flagButton);
  flagRow.appendChild(flagStatus);
  outputColumn.appendChild(flagRow);

  let last: LastPrediction | null = null;
  let pending = false;

  const refreshSubmit = () => {
    submitButton.disabled = pending || !widgets.every((w) => w.populated());
  };
  widgets.forEach((w) => (w.onchange = refreshSubmit));
  refreshSubmit();

  const showError = (error: unknown) => {
    errorPanel.hidden = false;
    errorPanel.textContent = "";
    if (error instanceof ApiError) {
      errorPanel.appendChild(element("strong", "error-code", error.body.error_code));
      const where =
        error.body.input_index !== undefined ? ` (input ${error.body.input_index})` : "";
      errorPanel.appendChild(element("span", "error-detail", ` ${error.body.detail}${where}`));
    } else {
      errorPanel.appendChild(element("strong", "error-code", "error"));
      errorPanel.appendChild(element("span", "error-detail", ` ${String(error)}`));
    }
  };

  submitButton.addEventListener("click", () => {
    if (pending || !widgets.every((w) => w.populated())) return;
    const data = widgets.map((w) => w.value());
    const edits = widgets.map((w) => w.edits());
    pending = true;
    refreshSubmit();
    errorPanel.hidden = true;
    void api
      .predict(data, edits)
      .then((response) => {
        response.data.forEach((value, i) => {
          if (outputSlots[i]) renderOutput(config.outputs[i], value, outputSlots[i]);
        });
        durationLine.textContent = `${response.duration_ms.toFixed(1)} ms`;
        last = { data, edits, output: response.data };
        flagButton.disabled = false;
        flagStatus.textContent = "";
      })
      .catch(showError) // inputs and edit state stay untouched on failure
      .finally(() => {
        pending = false;
        refreshSubmit();
      });
  });

  flagButton.addEventListener("click", () => {
    if (!last) return;
    flagButton.disabled = true;
    void api
      .flag(last.data, last.output, flagMessage.value, last.edits)
      .then((id) => {
        flagStatus.textContent = `Flagged as ${id}`;
      })
      .catch((error) => {
        showError(error);
        flagStatus.textContent = "Flag failed";
      })
      .finally(() => {
        flagButton.disabled = last === null;
      });
  });
}

export async function bootstrap(mount: HTMLElement): Promise<void> {
  try {
    const config = await fetchConfig();
    buildApp(config, mount);
  } catch (error) {
    mount.textContent = "";
    const panel = element("div", "error-panel");
    panel.appendChild(element("strong", "error-code", "unreachable"));
    panel.appendChild(
      element("span", "error-detail", ` Could not load the interface description: ${String(error)}`),
    );
    mount.appendChild(panel);
  }
}

// Input widgets and output renderers, one per component kind.
//
// Preview edits are applied client-side with the same semantics the
// server uses; the edit list a widget reports is exactly what gets sent.
// Submitted media bytes are the originals: editing never flattens the
// uploaded image.
import { applyEdits, clampCropToBounds } from "./edits.js";
import { bytesToDataUrl, encodeWav, floatToPcm16, trimSamples } from "./wav.js";
function element(tag, className, text) {
    const node = document.createElement(tag);
    if (className)
        node.className = className;
    if (text !== undefined)
        node.textContent = text;
    return node;
}
function widgetShell(component, fallback) {
    const root = element("section", "widget");
    root.dataset.kind = component.kind;
    root.appendChild(element("h3", "widget-label", component.label ?? fallback));
    return root;
}
// -- text ---------------------------------------------------------------------
export class TextWidget {
    constructor(component) {
        this.onchange = null;
        this.root = widgetShell(component, "Text");
        this.area = element("textarea", "text-input");
        this.area.rows = 4;
        this.area.placeholder = "Type an input...";
        this.area.addEventListener("input", () => this.onchange?.());
        this.root.appendChild(this.area);
    }
    populated() {
        return this.area.value.length > 0;
    }
    value() {
        return this.area.value;
    }
    edits() {
        return [];
    }
    clear() {
        this.area.value = "";
        this.onchange?.();
    }
    setExample(value) {
        this.area.value = value;
        this.onchange?.();
    }
}
export class ImageWidget {
    constructor(component) {
        this.onchange = null;
        this.originalDataUrl = null;
        this.raw = null;
        this.editList = [];
        this.tool = "paint";
        this.color = [0, 0, 0];
        this.radius = 8;
        this.activeStroke = null;
        this.cropStart = null;
        this.cropPreview = null;
        this.root = widgetShell(component, "Image");
        this.dropZone = element("div", "drop-zone", "Drag & drop an image, or click to browse");
        const fileInput = element("input");
        fileInput.type = "file";
        fileInput.accept = "image/png,image/jpeg";
        fileInput.hidden = true;
        fileInput.addEventListener("change", () => {
            const file = fileInput.files?.[0];
            if (file)
                void this.loadFile(file);
        });
        this.dropZone.addEventListener("click", () => fileInput.click());
        this.dropZone.addEventListener("dragover", (event) => event.preventDefault());
        this.dropZone.addEventListener("drop", (event) => {
            event.preventDefault();
            const file = event.dataTransfer?.files?.[0];
            if (file)
                void this.loadFile(file);
        });
        this.canvas = element("canvas", "image-canvas");
        this.canvas.hidden = true;
        this.bindPointerTools();
        this.toolbar = element("div", "toolbar");
        this.toolbar.hidden = true;
        const paintButton = element("button", "tool active", "paint");
        const cropButton = element("button", "tool", "crop");
        paintButton.addEventListener("click", () => {
            this.tool = "paint";
            paintButton.classList.add("active");
            cropButton.classList.remove("active");
        });
        cropButton.addEventListener("click", () => {
            this.tool = "crop";
            cropButton.classList.add("active");
            paintButton.classList.remove("active");
        });
        const flipButton = element("button", "tool", "flip");
        flipButton.addEventListener("click", () => this.pushEdit({ op: "flip", axis: "vertical" }));
        const undoButton = element("button", "tool", "undo");
        undoButton.addEventListener("click", () => {
            this.editList.pop();
            this.repaint();
            this.onchange?.();
        });
        const clearButton = element("button", "tool", "clear");
        clearButton.addEventListener("click", () => this.clear());
        const colorInput = element("input");
        colorInput.type = "color";
        colorInput.title = "brush color";
        colorInput.addEventListener("input", () => {
            const v = colorInput.value;
            this.color = [
                parseInt(v.slice(1, 3), 16),
                parseInt(v.slice(3, 5), 16),
                parseInt(v.slice(5, 7), 16),
            ];
        });
        const radiusInput = element("input");
        radiusInput.type = "range";
        radiusInput.min = "1";
        radiusInput.max = "40";
        radiusInput.value = String(this.radius);
        radiusInput.title = "brush radius";
        radiusInput.addEventListener("input", () => {
            this.radius = Math.max(1, Math.round(Number(radiusInput.value)));
        });
        for (const node of [paintButton, cropButton, flipButton, undoButton, clearButton, colorInput, radiusInput]) {
            this.toolbar.appendChild(node);
        }
        this.root.appendChild(this.dropZone);
        this.root.appendChild(this.toolbar);
        this.root.appendChild(this.canvas);
        this.root.appendChild(fileInput);
    }
    async loadFile(file) {
        const dataUrl = await new Promise((resolve, reject) => {
            const reader = new FileReader();
            reader.onload = () => resolve(reader.result);
            reader.onerror = () => reject(reader.error);
            reader.readAsDataURL(file);
        });
        await this.setFromDataUrl(dataUrl);
    }
    async setFromDataUrl(dataUrl) {
        const image = new Image();
        await new Promise((resolve, reject) => {
            image.onload = resolve;
            image.onerror = () => reject(new Error("cannot decode image"));
            image.src = dataUrl;
        });
        const scratch = document.createElement("canvas");
        scratch.width = image.naturalWidth;
        scratch.height = image.naturalHeight;
        const ctx = scratch.getContext("2d");
        if (!ctx)
            return;
        ctx.drawImage(image, 0, 0);
        const data = ctx.getImageData(0, 0, scratch.width, scratch.height);
        this.setRaw({ width: data.width, height: data.height, data: data.data }, dataUrl);
    }
    // Entry point used by tests and example tiles: install decoded pixels
    // plus the exact original bytes that will be submitted.
    setRaw(raw, originalDataUrl) {
        this.raw = raw;
        this.originalDataUrl = originalDataUrl;
        this.editList = [];
        this.dropZone.hidden = true;
        this.canvas.hidden = false;
        this.toolbar.hidden = false;
        this.repaint();
        this.onchange?.();
    }
    pushEdit(edit) {
        if (!this.raw)
            return;
        this.editList.push(edit);
        this.repaint();
        this.onchange?.();
    }
    preview() {
        if (!this.raw)
            return null;
        return applyEdits(this.raw, this.editList);
    }
    repaint() {
        const preview = this.preview();
        if (!preview)
            return;
        this.canvas.width = preview.width;
        this.canvas.height = preview.height;
        const ctx = this.canvas.getContext("2d");
        if (!ctx)
            return; // non-canvas environments still track state
        ctx.fillStyle = "#fff";
        ctx.fillRect(0, 0, preview.width, preview.height);
        const imageData = ctx.createImageData(preview.width, preview.height);
        imageData.data.set(preview.data);
        ctx.putImageData(imageData, 0, 0);
        if (this.cropPreview) {
            ctx.strokeStyle = "#e4572e";
            ctx.lineWidth = Math.max(1, preview.width / 200);
            ctx.strokeRect(this.cropPreview.x, this.cropPreview.y, this.cropPreview.w, this.cropPreview.h);
        }
    }
    canvasPixel(event) {
        const rect = this.canvas.getBoundingClientRect();
        const scaleX = this.canvas.width / rect.width;
        const scaleY = this.canvas.height / rect.height;
        return [
            Math.floor((event.clientX - rect.left) * scaleX + 0.5),
            Math.floor((event.clientY - rect.top) * scaleY + 0.5),
        ];
    }
    bindPointerTools() {
        this.canvas.addEventListener("pointerdown", (event) => {
            if (!this.raw)
                return;
            this.canvas.setPointerCapture(event.pointerId);
            const [x, y] = this.canvasPixel(event);
            if (this.tool === "paint") {
                this.activeStroke = { op: "stroke", color: [...this.color], radius: this.radius, points: [[x, y]] };
            }
            else {
                this.cropStart = [x, y];
            }
        });
        this.canvas.addEventListener("pointermove", (event) => {
            if (this.activeStroke) {
                const [x, y] = this.canvasPixel(event);
                const last = this.activeStroke.points[this.activeStroke.points.length - 1];
                if (last[0] !== x || last[1] !== y) {
                    this.activeStroke.points.push([x, y]);
                    // Live feedback: repaint with the in-progress stroke included.
                    const preview = this.preview();
                    if (preview) {
                        const withStroke = applyEdits(preview, [this.activeStroke]);
                        this.drawRaw(withStroke);
                    }
                }
            }
            else if (this.cropStart) {
                const [x, y] = this.canvasPixel(event);
                this.cropPreview = {
                    x: Math.min(this.cropStart[0], x),
                    y: Math.min(this.cropStart[1], y),
                    w: Math.abs(x - this.cropStart[0]),
                    h: Math.abs(y - this.cropStart[1]),
                };
                this.repaint();
            }
        });
        this.canvas.addEventListener("pointerup", (event) => {
            if (this.activeStroke) {
                this.pushEdit(this.activeStroke);
                this.activeStroke = null;
            }
            else if (this.cropStart && this.raw) {
                const [x, y] = this.canvasPixel(event);
                const preview = this.preview();
                if (preview) {
                    const rect = clampCropToBounds(preview, Math.min(this.cropStart[0], x), Math.min(this.cropStart[1], y), Math.abs(x - this.cropStart[0]), Math.abs(y - this.cropStart[1]));
                    if (rect && rect.w > 2 && rect.h > 2) {
                        this.pushEdit({ op: "crop", ...rect });
                    }
                }
                this.cropStart = null;
                this.cropPreview = null;
                this.repaint();
            }
        });
    }
    drawRaw(preview) {
        const ctx = this.canvas.getContext("2d");
        if (!ctx)
            return;
        this.canvas.width = preview.width;
        this.canvas.height = preview.height;
        const imageData = ctx.createImageData(preview.width, preview.height);
        imageData.data.set(preview.data);
        ctx.putImageData(imageData, 0, 0);
    }
    populated() {
        return this.originalDataUrl !== null;
    }
    value() {
        if (!this.originalDataUrl)
            throw new Error("image not populated");
        return this.originalDataUrl;
    }
    edits() {
        return [...this.editList];
    }
    clear() {
        this.raw = null;
        this.originalDataUrl = null;
        this.editList = []; // clearing an input clears its edit list
        this.canvas.hidden = true;
        this.toolbar.hidden = true;
        this.dropZone.hidden = false;
        this.onchange?.();
    }
    setExample(value) {
        void this.setFromDataUrl(value);
    }
}
// -- audio ---------------------------------------------------------------------
export class AudioWidget {
    constructor(component) {
        this.onchange = null;
        this.uploadedDataUrl = null;
        this.recorded = null;
        this.trimStart = 0;
        this.trimEnd = 0;
        this.recording = null;
        this.root = widgetShell(component, "Audio");
        const controls = element("div", "toolbar");
        this.recordButton = element("button", "tool", "record");
        this.recordButton.addEventListener("click", () => void this.toggleRecord());
        const fileInput = element("input");
        fileInput.type = "file";
        fileInput.accept = "audio/wav,.wav";
        fileInput.addEventListener("change", () => {
            const file = fileInput.files?.[0];
            if (file)
                void this.loadFile(file);
        });
        controls.appendChild(this.recordButton);
        controls.appendChild(fileInput);
        this.status = element("p", "audio-status", "No audio yet.");
        this.trimRow = element("div", "trim-row");
        this.trimRow.hidden = true;
        this.startInput = element("input");
        this.endInput = element("input");
        for (const [input, label] of [
            [this.startInput, "start (s)"],
            [this.endInput, "end (s)"],
        ]) {
            input.type = "number";
            input.step = "0.1";
            input.min = "0";
            const wrap = element("label", "trim-label", label + " ");
            wrap.appendChild(input);
            this.trimRow.appendChild(wrap);
            input.addEventListener("input", () => this.updateTrim());
        }
        this.root.appendChild(controls);
        this.root.appendChild(this.status);
        this.root.appendChild(this.trimRow);
    }
    async loadFile(file) {
        const dataUrl = await new Promise((resolve, reject) => {
            const reader = new FileReader();
            reader.onload = () => resolve(reader.result);
            reader.onerror = () => reject(reader.error);
            reader.readAsDataURL(file);
        });
        this.uploadedDataUrl = dataUrl;
        this.recorded = null;
        this.trimRow.hidden = true;
        this.status.textContent = `Uploaded ${file.name} (submitted as-is).`;
        this.onchange?.();
    }
    async toggleRecord() {
        if (this.recording) {
            this.recording.stop();
            return;
        }
        const media = navigator.mediaDevices;
        if (!media?.getUserMedia) {
            this.status.textContent = "Recording is not available in this browser.";
            return;
        }
        const stream = await media.getUserMedia({ audio: true });
        const AudioCtx = window.AudioContext;
        if (!AudioCtx)
            return;
        const ctx = new AudioCtx();
        const source = ctx.createMediaStreamSource(stream);
        const processor = ctx.createScriptProcessor(4096, 1, 1);
        const chunks = [];
        processor.onaudioprocess = (event) => {
            chunks.push(new Float32Array(event.inputBuffer.getChannelData(0)));
        };
        source.connect(processor);
        processor.connect(ctx.destination);
        this.recordButton.textContent = "stop";
        this.recording = {
            stop: () => {
                processor.disconnect();
                source.disconnect();
                stream.getTracks().forEach((t) => t.stop());
                void ctx.close();
                const total = chunks.reduce((n, c) => n + c.length, 0);
                const samples = new Float32Array(total);
                let offset = 0;
                for (const chunk of chunks) {
                    samples.set(chunk, offset);
                    offset += chunk.length;
                }
                this.installRecording(samples, ctx.sampleRate);
                this.recording = null;
                this.recordButton.textContent = "record";
            },
        };
    }
    installRecording(samples, rate) {
        this.recorded = { samples, rate };
        this.uploadedDataUrl = null;
        const duration = samples.length / rate;
        this.trimStart = 0;
        this.trimEnd = duration;
        this.startInput.value = "0";
        this.endInput.value = duration.toFixed(2);
        this.endInput.max = this.startInput.max = duration.toFixed(2);
        this.trimRow.hidden = false;
        this.status.textContent = `Recorded ${duration.toFixed(2)} s at ${rate} Hz.`;
        this.onchange?.();
    }
    updateTrim() {
        if (!this.recorded)
            return;
        const duration = this.recorded.samples.length / this.recorded.rate;
        const start = Number(this.startInput.value);
        const end = Number(this.endInput.value);
        if (Number.isFinite(start) && Number.isFinite(end) && 0 <= start && start < end && end <= duration) {
            this.trimStart = start;
            this.trimEnd = end;
            this.status.textContent = `Will submit ${(end - start).toFixed(2)} s of audio.`;
        }
    }
    populated() {
        return this.uploadedDataUrl !== null || this.recorded !== null;
    }
    value() {
        if (this.uploadedDataUrl)
            return this.uploadedDataUrl;
        if (!this.recorded)
            throw new Error("audio not populated");
        const trimmed = trimSamples(this.recorded.samples, this.recorded.rate, this.trimStart, this.trimEnd);
        return bytesToDataUrl(encodeWav(floatToPcm16(trimmed), this.recorded.rate), "audio/wav");
    }
    edits() {
        return [];
    }
    clear() {
        this.uploadedDataUrl = null;
        this.recorded = null;
        this.trimRow.hidden = true;
        this.status.textContent = "No audio yet.";
        this.onchange?.();
    }
    setExample(value) {
        this.uploadedDataUrl = value;
        this.recorded = null;
        this.status.textContent = "Example audio loaded.";
        this.onchange?.();
    }
}
export function buildInputWidget(component) {
    if (component.kind === "image_in")
        return new ImageWidget(component);
    if (component.kind === "audio_in")
        return new AudioWidget(component);
    return new TextWidget(component);
}
// -- outputs ---------------------------------------------------------------------
export function renderOutput(component, value, container) {
    container.textContent = "";
    if (component.kind === "label_out") {
        const result = value;
        const list = element("div", "label-bars");
        // Bars render in the order the server returned them.
        for (const [label, score] of result.confidences) {
            const row = element("div", "label-row");
            row.appendChild(element("span", "label-name", label));
            const track = element("div", "bar-track");
            const bar = element("div", "bar-fill");
            bar.style.width = `${Math.round(score * 100)}%`;
            track.appendChild(bar);
            row.appendChild(track);
            row.appendChild(element("span", "label-score", score.toFixed(3)));
            list.appendChild(row);
        }
        container.appendChild(list);
    }
    else if (component.kind === "image_out") {
        const img = element("img", "output-image");
        img.src = value;
        container.appendChild(img);
    }
    else {
        const pre = element("pre", "output-text");
        pre.textContent = String(value);
        container.appendChild(pre);
    }
}

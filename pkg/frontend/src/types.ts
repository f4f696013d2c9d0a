// Wire types for the three server endpoints.

export interface ComponentConfig {
  kind:
    | "image_in"
    | "text_in"
    | "audio_in"
    | "label_out"
    | "text_out"
    | "image_out";
  label: string | null;
  target_width?: number;
  target_height?: number;
  sample_rate?: number;
  top_k?: number;
}

export interface InterfaceConfig {
  title: string;
  description: string | null;
  inputs: ComponentConfig[];
  outputs: ComponentConfig[];
  examples: string[][];
  share_url?: string;
}

export type CropEdit = { op: "crop"; x: number; y: number; w: number; h: number };
export type StrokeEdit = {
  op: "stroke";
  color: [number, number, number];
  radius: number;
  points: [number, number][];
};
export type FlipEdit = { op: "flip"; axis: "vertical" };
export type Edit = CropEdit | StrokeEdit | FlipEdit;

export interface LabelValue {
  top_label: string;
  confidences: [string, number][];
}

export type OutputValue = string | LabelValue;

export interface PredictResponse {
  data: OutputValue[];
  duration_ms: number;
}

export interface ApiErrorBody {
  error_code: string;
  detail: string;
  input_index?: number;
}

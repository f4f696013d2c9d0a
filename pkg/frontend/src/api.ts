// Thin fetch wrappers.  All paths are RELATIVE so the page works both
// served directly and under a share link's /<token>/ prefix.

import type { ApiErrorBody, Edit, InterfaceConfig, PredictResponse } from "./types.js";

export class ApiError extends Error {
  constructor(
    public status: number,
    public body: ApiErrorBody,
  ) {
    super(`${body.error_code}: ${body.detail}`);
  }
}

async function parseError(response: Response): Promise<ApiError> {
  let body: ApiErrorBody;
  try {
    body = (await response.json()) as ApiErrorBody;
  } catch {
    body = { error_code: "http", detail: `status ${response.status}` };
  }
  return new ApiError(response.status, body);
}

export async function fetchConfig(): Promise<InterfaceConfig> {
  const response = await fetch("config");
  if (!response.ok) throw await parseError(response);
  return (await response.json()) as InterfaceConfig;
}

export async function postPredict(data: unknown[], edits: Edit[][]): Promise<PredictResponse> {
  const response = await fetch("api/predict", {
    method: "POST",
    headers: { "Content-Type": "application/json" },
    body: JSON.stringify({ data, edits }),
  });
  if (!response.ok) throw await parseError(response);
  return (await response.json()) as PredictResponse;
}

export async function postFlag(
  data: unknown[],
  output: unknown[],
  message: string,
  edits: Edit[][],
): Promise<string> {
  const response = await fetch("api/flag", {
    method: "POST",
    headers: { "Content-Type": "application/json" },
    body: JSON.stringify({ data, output, message, edits }),
  });
  if (!response.ok) throw await parseError(response);
  const body = (await response.json()) as { id: string };
  return body.id;
}

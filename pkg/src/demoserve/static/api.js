// Thin fetch wrappers.  All paths are RELATIVE so the page works both
// served directly and under a share link's /<token>/ prefix.
export class ApiError extends Error {
    constructor(status, body) {
        super(`${body.error_code}: ${body.detail}`);
        this.status = status;
        this.body = body;
    }
}
async function parseError(response) {
    let body;
    try {
        body = (await response.json());
    }
    catch {
        body = { error_code: "http", detail: `status ${response.status}` };
    }
    return new ApiError(response.status, body);
}
export async function fetchConfig() {
    const response = await fetch("config");
    if (!response.ok)
        throw await parseError(response);
    return (await response.json());
}
export async function postPredict(data, edits) {
    const response = await fetch("api/predict", {
        method: "POST",
        headers: { "Content-Type": "application/json" },
        body: JSON.stringify({ data, edits }),
    });
    if (!response.ok)
        throw await parseError(response);
    return (await response.json());
}
export async function postFlag(data, output, message, edits) {
    const response = await fetch("api/flag", {
        method: "POST",
        headers: { "Content-Type": "application/json" },
        body: JSON.stringify({ data, output, message, edits }),
    });
    if (!response.ok)
        throw await parseError(response);
    const body = (await response.json());
    return body.id;
}

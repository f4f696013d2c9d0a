// PCM16 WAV encoding and trimming for recorded audio.
export function trimSamples(samples, rate, startS, endS) {
    const start = Math.max(0, Math.floor(startS * rate + 0.5));
    const end = Math.min(samples.length, Math.floor(endS * rate + 0.5));
    if (start >= end)
        throw new Error("trim range contains no samples");
    return samples.slice(start, end);
}
export function floatToPcm16(samples) {
    const out = new Int16Array(samples.length);
    for (let i = 0; i < samples.length; i++) {
        const v = Math.max(-1, Math.min(1, samples[i]));
        out[i] = Math.round(v < 0 ? v * 32768 : v * 32767);
    }
    return out;
}
export function encodeWav(pcm, sampleRate, channels = 1) {
    const dataSize = pcm.length * 2;
    const buffer = new ArrayBuffer(44 + dataSize);
    const view = new DataView(buffer);
    const writeAscii = (offset, text) => {
        for (let i = 0; i < text.length; i++)
            view.setUint8(offset + i, text.charCodeAt(i));
    };
    writeAscii(0, "RIFF");
    view.setUint32(4, 36 + dataSize, true);
    writeAscii(8, "WAVE");
    writeAscii(12, "fmt ");
    view.setUint32(16, 16, true);
    view.setUint16(20, 1, true); // PCM
    view.setUint16(22, channels, true);
    view.setUint32(24, sampleRate, true);
    view.setUint32(28, sampleRate * channels * 2, true);
    view.setUint16(32, channels * 2, true);
    view.setUint16(34, 16, true);
    writeAscii(36, "data");
    view.setUint32(40, dataSize, true);
    for (let i = 0; i < pcm.length; i++)
        view.setInt16(44 + i * 2, pcm[i], true);
    return new Uint8Array(buffer);
}
export function bytesToDataUrl(bytes, mime) {
    let binary = "";
    const chunk = 0x8000;
    for (let i = 0; i < bytes.length; i += chunk) {
        binary += String.fromCharCode(...bytes.subarray(i, i + chunk));
    }
    return `data:${mime};base64,${btoa(binary)}`;
}

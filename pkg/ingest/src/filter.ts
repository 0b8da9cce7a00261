/**
 * Zero-phase bandpass filtering for the trial epochs.
 *
 * The band is realized as a cascade of second-order Butterworth high-pass
 * and low-pass biquads (audio-cookbook bilinear design, Q = 1/sqrt(2)),
 * run forward and then backward so the net phase response is zero. Edges
 * are padded with reflected signal to suppress startup transients.
 */

export interface Biquad {
    b0: number;
    b1: number;
    b2: number;
    a1: number;
    a2: number;
}

const BUTTERWORTH_Q = Math.SQRT1_2;

function designBiquad(kind: "lowpass" | "highpass", cutoffHz: number, fs: number): Biquad {
    if (!(cutoffHz > 0) || !(cutoffHz < fs / 2)) {
        throw new Error(`cutoff ${cutoffHz} Hz outside (0, ${fs / 2}) for fs=${fs}`);
    }
    const w0 = (2 * Math.PI * cutoffHz) / fs;
    const cosw = Math.cos(w0);
    const alpha = Math.sin(w0) / (2 * BUTTERWORTH_Q);
    const a0 = 1 + alpha;
    if (kind === "lowpass") {
        return {
            b0: ((1 - cosw) / 2) / a0,
            b1: (1 - cosw) / a0,
            b2: ((1 - cosw) / 2) / a0,
            a1: (-2 * cosw) / a0,
            a2: (1 - alpha) / a0,
        };
    }
    return {
        b0: ((1 + cosw) / 2) / a0,
        b1: -(1 + cosw) / a0,
        b2: ((1 + cosw) / 2) / a0,
        a1: (-2 * cosw) / a0,
        a2: (1 - alpha) / a0,
    };
}

export function designBandpass(lowHz: number, highHz: number, fs: number): Biquad[] {
    if (!(lowHz < highHz)) {
        throw new Error(`band edges must satisfy low < high (got ${lowHz}..${highHz})`);
    }
    return [designBiquad("highpass", lowHz, fs), designBiquad("lowpass", highHz, fs)];
}

function runBiquad(x: Float64Array, q: Biquad): Float64Array {
    const y = new Float64Array(x.length);
    let x1 = 0, x2 = 0, y1 = 0, y2 = 0;
    for (let i = 0; i < x.length; i++) {
        const v = q.b0 * x[i] + q.b1 * x1 + q.b2 * x2 - q.a1 * y1 - q.a2 * y2;
        x2 = x1;
        x1 = x[i];
        y2 = y1;
        y1 = v;
        y[i] = v;
    }
    return y;
}

function reflectPad(x: Float64Array, pad: number): Float64Array {
    const n = x.length;
    const out = new Float64Array(n + 2 * pad);
    for (let i = 0; i < pad; i++) {
        out[i] = 2 * x[0] - x[pad - i];
        out[pad + n + i] = 2 * x[n - 1] - x[n - 2 - i];
    }
    out.set(x, pad);
    return out;
}

/** Apply the cascade forward and backward (zero net phase). */
export function filtfilt(x: Float64Array, cascade: Biquad[], pad?: number): Float64Array {
    const padLen = pad ?? Math.min(Math.max(x.length - 2, 0), 3 * 2 * (cascade.length + 1) * 4);
    let y = padLen > 0 ? reflectPad(x, padLen) : Float64Array.from(x);
    for (const q of cascade) {
        y = runBiquad(y, q);
        y.reverse();
        y = runBiquad(y, q);
        y.reverse();
    }
    return y.subarray(padLen, padLen + x.length).slice();
}

/** Filter each row (channel) of a channels-by-samples matrix. */
export function bandpassChannels(
    channels: Float64Array[],
    lowHz: number,
    highHz: number,
    fs: number,
): Float64Array[] {
    const cascade = designBandpass(lowHz, highHz, fs);
    return channels.map((ch) => filtfilt(ch, cascade));
}

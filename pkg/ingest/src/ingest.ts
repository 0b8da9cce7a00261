/**
 * Per-subject conversion pipeline: select the motor-cortex channels,
 * bandpass-filter, cut one epoch per cue, and store each epoch's channel
 * covariance as a labeled covset trial.
 */

import { readdirSync, readFileSync } from "node:fs";
import { join } from "node:path";

import {
    EdfAnnotation,
    EdfRecording,
    decodeEdf,
    normalizeChannel,
    samplingRate,
} from "./edf.js";
import { bandpassChannels } from "./filter.js";
import { ensurePositiveDefinite, lowerTriangle, trialCovariance } from "./covariance.js";

export interface IngestConfig {
    /** EEG channels over the motor cortex, in covset row order. */
    channels: string[];
    bandLowHz: number;
    bandHighHz: number;
    /** Epoch window in seconds after cue onset. */
    windowStart: number;
    windowEnd: number;
    /** Cue label -> class label mapping (1 = hands, 2 = feet). */
    cueClasses: Record<string, number>;
    /** Run numbers holding the hands-vs-feet imagery task. */
    runs: number[];
}

export const DEFAULT_CONFIG: IngestConfig = {
    channels: ["F3", "Fz", "F4", "C3", "Cz", "C4", "P3", "Pz", "P4"],
    bandLowHz: 7,
    bandHighHz: 35,
    windowStart: 1.0,
    windowEnd: 2.0,
    cueClasses: { T1: 1, T2: 2 },
    runs: [6, 10, 14],
};

export function validateConfig(cfg: IngestConfig): void {
    if (!(cfg.bandLowHz < cfg.bandHighHz)) {
        throw new Error(`band edges must satisfy low < high (${cfg.bandLowHz}..${cfg.bandHighHz})`);
    }
    if (!(cfg.windowStart < cfg.windowEnd)) {
        throw new Error(`epoch window must satisfy start < end (${cfg.windowStart}..${cfg.windowEnd})`);
    }
    if (cfg.channels.length === 0) throw new Error("no channels configured");
}

export interface CovsetTrial {
    label: number;
    matrix: number[];
}

export interface SubjectResult {
    id: string;
    trials: CovsetTrial[];
    classCounts: Record<number, number>;
    runsUsed: string[];
}

export interface SkippedSubject {
    id: string;
    reason: string;
}

/** Extract labeled trials from one decoded recording. */
export function trialsFromRecording(rec: EdfRecording, cfg: IngestConfig): CovsetTrial[] {
    const byName = new Map<string, number>();
    rec.signals.forEach((s, i) => {
        if (rec.samples.has(i)) byName.set(normalizeChannel(s.label), i);
    });
    const indices = cfg.channels.map((name) => {
        const idx = byName.get(normalizeChannel(name));
        if (idx === undefined) throw new Error(`channel ${name} missing`);
        return idx;
    });
    const fs = samplingRate(rec, indices[0]);
    for (const idx of indices) {
        if (samplingRate(rec, idx) !== fs) {
            throw new Error("selected channels have mixed sampling rates");
        }
    }
    const raw = indices.map((idx) => rec.samples.get(idx)!);
    const filtered = bandpassChannels(raw, cfg.bandLowHz, cfg.bandHighHz, fs);

    const cues = rec.annotations.filter((a: EdfAnnotation) => a.label in cfg.cueClasses);
    const trials: CovsetTrial[] = [];
    const nSamples = filtered[0].length;
    for (const cue of cues) {
        const start = Math.round((cue.onset + cfg.windowStart) * fs);
        const end = Math.round((cue.onset + cfg.windowEnd) * fs);
        if (start < 0 || end > nSamples || end <= start) continue;
        const epoch = filtered.map((ch) => ch.subarray(start, end));
        const cov = ensurePositiveDefinite(trialCovariance(epoch));
        trials.push({ label: cfg.cueClasses[cue.label], matrix: lowerTriangle(cov) });
    }
    return trials;
}

const SUBJECT_DIR = /^S(\d{3})$/;

function runFiles(root: string, subject: string, cfg: IngestConfig): string[] {
    return cfg.runs.map((r) => join(root, subject, `${subject}R${String(r).padStart(2, "0")}.edf`));
}

export interface IngestOutput {
    covset: {
        version: 1;
        dim: number;
        subjects: { id: string; metadata: Record<string, unknown>; trials: CovsetTrial[] }[];
    };
    manifest: {
        config: IngestConfig;
        filter: string;
        subjects: Record<string, { trials: number; classCounts: Record<number, number>; runs: string[] }>;
        skipped: SkippedSubject[];
    };
}

/** Convert every S### directory under ``root`` into one covset document. */
export function ingestDirectory(root: string, cfg: IngestConfig = DEFAULT_CONFIG): IngestOutput {
    validateConfig(cfg);
    const subjectIds = readdirSync(root)
        .filter((name) => SUBJECT_DIR.test(name))
        .sort();
    if (subjectIds.length === 0) {
        throw new Error(`no S### subject directories under ${root}`);
    }

    const results: SubjectResult[] = [];
    const skipped: SkippedSubject[] = [];
    for (const sid of subjectIds) {
        try {
            const trials: CovsetTrial[] = [];
            const used: string[] = [];
            for (const path of runFiles(root, sid, cfg)) {
                const rec = decodeEdf(readFileSync(path));
                trials.push(...trialsFromRecording(rec, cfg));
                used.push(path.split("/").pop()!);
            }
            const classCounts: Record<number, number> = {};
            for (const t of trials) classCounts[t.label] = (classCounts[t.label] ?? 0) + 1;
            const classes = Object.keys(classCounts);
            if (classes.length < 2) {
                throw new Error(`only ${classes.length} cue classes present`);
            }
            results.push({ id: sid, trials, classCounts, runsUsed: used });
        } catch (err) {
            skipped.push({ id: sid, reason: (err as Error).message });
        }
    }

    const dim = cfg.channels.length;
    return {
        covset: {
            version: 1,
            dim,
            subjects: results.map((r) => ({
                id: r.id,
                metadata: { origin: "physionet-eegmmidb", runs: r.runsUsed },
                trials: r.trials,
            })),
        },
        manifest: {
            config: cfg,
            filter:
                `zero-phase forward-backward cascade of 2nd-order Butterworth ` +
                `high-pass (${cfg.bandLowHz} Hz) and low-pass (${cfg.bandHighHz} Hz) biquads`,
            subjects: Object.fromEntries(
                results.map((r) => [
                    r.id,
                    { trials: r.trials.length, classCounts: r.classCounts, runs: r.runsUsed },
                ]),
            ),
            skipped,
        },
    };
}

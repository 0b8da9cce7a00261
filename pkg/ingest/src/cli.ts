/**
 * Command line: convert a directory of Physionet motor-imagery recordings
 * (S001/S001R06.edf, ...) into a covset JSON plus an ingest manifest.
 *
 *   covset-edf-ingest --input <dir> --out <covset.json> [--manifest <m.json>]
 *       [--channels F3,Fz,...] [--band 7:35] [--window 1:2] [--runs 6,10,14]
 */

import { writeFileSync } from "node:fs";

import { DEFAULT_CONFIG, IngestConfig, ingestDirectory } from "./ingest.js";

function parseArgs(argv: string[]): Map<string, string> {
    const out = new Map<string, string>();
    for (let i = 0; i < argv.length; i++) {
        const arg = argv[i];
        if (!arg.startsWith("--")) throw new Error(`unexpected argument ${arg}`);
        const value = argv[i + 1];
        if (value === undefined) throw new Error(`missing value for ${arg}`);
        out.set(arg.slice(2), value);
        i++;
    }
    return out;
}

function parsePair(text: string, what: string): [number, number] {
    const parts = text.split(":").map(Number);
    if (parts.length !== 2 || parts.some((v) => !Number.isFinite(v))) {
        throw new Error(`${what} expects two numbers as a:b, got "${text}"`);
    }
    return [parts[0], parts[1]];
}

export function main(argv: string[]): number {
    let args: Map<string, string>;
    try {
        args = parseArgs(argv);
    } catch (err) {
        console.error(`usage error: ${(err as Error).message}`);
        return 2;
    }
    const input = args.get("input");
    const out = args.get("out");
    if (!input || !out) {
        console.error("usage: covset-edf-ingest --input <dir> --out <covset.json> "
            + "[--manifest <m.json>] [--channels a,b,...] [--band lo:hi] "
            + "[--window start:end] [--runs 6,10,14]");
        return 2;
    }

    const cfg: IngestConfig = { ...DEFAULT_CONFIG };
    try {
        if (args.has("channels")) cfg.channels = args.get("channels")!.split(",").map((s) => s.trim());
        if (args.has("band")) [cfg.bandLowHz, cfg.bandHighHz] = parsePair(args.get("band")!, "--band");
        if (args.has("window")) [cfg.windowStart, cfg.windowEnd] = parsePair(args.get("window")!, "--window");
        if (args.has("runs")) cfg.runs = args.get("runs")!.split(",").map((s) => parseInt(s.trim(), 10));

        const result = ingestDirectory(input, cfg);
        writeFileSync(out, JSON.stringify(result.covset));
        const manifestPath = args.get("manifest") ?? `${out}.manifest.json`;
        writeFileSync(manifestPath, JSON.stringify(result.manifest, null, 2));
        const n = result.covset.subjects.length;
        const skipped = result.manifest.skipped.length;
        console.log(`wrote ${n} subjects to ${out} (${skipped} skipped; see ${manifestPath})`);
        return 0;
    } catch (err) {
        console.error(`error: ${(err as Error).message}`);
        return 1;
    }
}

if (process.argv[1] && process.argv[1].endsWith("cli.js")) {
    process.exit(main(process.argv.slice(2)));
}

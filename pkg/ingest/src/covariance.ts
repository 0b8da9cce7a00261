/**
 * Trial covariance computation and the symmetric eigenvalue check used to
 * guarantee every emitted matrix is positive definite.
 */

/** (1/s) X X^T over a channels-by-samples epoch. */
export function trialCovariance(channels: Float64Array[]): number[][] {
    const ch = channels.length;
    if (ch === 0) throw new Error("trialCovariance: no channels");
    const s = channels[0].length;
    if (channels.some((c) => c.length !== s)) {
        throw new Error("trialCovariance: channels have unequal lengths");
    }
    if (s < ch) {
        throw new Error(`trialCovariance: ${s} samples < ${ch} channels gives a singular matrix`);
    }
    const cov: number[][] = Array.from({ length: ch }, () => new Array<number>(ch).fill(0));
    for (let i = 0; i < ch; i++) {
        for (let j = i; j < ch; j++) {
            let acc = 0;
            const a = channels[i];
            const b = channels[j];
            for (let t = 0; t < s; t++) acc += a[t] * b[t];
            cov[i][j] = cov[j][i] = acc / s;
        }
    }
    return cov;
}

/** Eigenvalues of a small symmetric matrix by cyclic Jacobi rotations. */
export function symmetricEigenvalues(matrix: number[][], sweeps = 32): number[] {
    const n = matrix.length;
    const a = matrix.map((row) => row.slice());
    for (let sweep = 0; sweep < sweeps; sweep++) {
        let off = 0;
        for (let p = 0; p < n - 1; p++) {
            for (let q = p + 1; q < n; q++) off += a[p][q] * a[p][q];
        }
        if (off < 1e-30) break;
        for (let p = 0; p < n - 1; p++) {
            for (let q = p + 1; q < n; q++) {
                if (a[p][q] === 0) continue;
                const theta = (a[q][q] - a[p][p]) / (2 * a[p][q]);
                const t = Math.sign(theta || 1) / (Math.abs(theta) + Math.sqrt(theta * theta + 1));
                const c = 1 / Math.sqrt(t * t + 1);
                const s = t * c;
                for (let k = 0; k < n; k++) {
                    const akp = a[k][p];
                    const akq = a[k][q];
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for (let k = 0; k < n; k++) {
                    const apk = a[p][k];
                    const aqk = a[q][k];
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
            }
        }
    }
    return Array.from({ length: n }, (_, i) => a[i][i]).sort((x, y) => x - y);
}

function trace(matrix: number[][]): number {
    return matrix.reduce((acc, row, i) => acc + row[i], 0);
}

/**
 * Ridge a covariance toward usability when it is numerically rank
 * deficient, mirroring the downstream library's policy: when the smallest
 * eigenvalue falls below 1e-10 of the trace, add ridge*trace/ch to the
 * diagonal.
 */
export function ensurePositiveDefinite(cov: number[][], ridge = 1e-8): number[][] {
    const tr = trace(cov);
    if (!(tr > 0)) throw new Error("covariance has non-positive trace");
    const eigMin = symmetricEigenvalues(cov)[0];
    if (eigMin >= 1e-10 * tr) return cov;
    const bump = (ridge * tr) / cov.length;
    return cov.map((row, i) => row.map((v, j) => (i === j ? v + bump : v)));
}

/** Row-major lower triangle, the covset storage layout. */
export function lowerTriangle(cov: number[][]): number[] {
    const out: number[] = [];
    for (let i = 0; i < cov.length; i++) {
        for (let j = 0; j <= i; j++) out.push(cov[i][j]);
    }
    return out;
}

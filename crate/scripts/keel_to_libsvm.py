"""Convert KEEL raw .dat tables into min-max scaled LIBSVM files.

Usage: python keel_to_libsvm.py <keel.dat> <positive-label> <out.libsvm>

Features are scaled to [-1, 1] column-wise (as `svm-scale` does); rows whose
last column equals <positive-label> are written as +1, everything else as -1.
Zero-valued features are omitted from the sparse output.
"""
import sys


def main(src, positive, dst):
    rows = []
    for line in open(src):
        line = line.strip()
        if not line or line.startswith("@"):
            continue
        parts = [p.strip() for p in line.split(",")]
        rows.append(([float(p) for p in parts[:-1]], parts[-1]))
    d = len(rows[0][0])
    lo = [min(r[0][j] for r in rows) for j in range(d)]
    hi = [max(r[0][j] for r in rows) for j in range(d)]
    with open(dst, "w") as out:
        for feats, label in rows:
            y = "+1" if label == positive else "-1"
            toks = [y]
            for j, x in enumerate(feats):
                if hi[j] == lo[j]:
                    continue
                s = -1.0 + 2.0 * (x - lo[j]) / (hi[j] - lo[j])
                if s != 0.0:
                    toks.append("%d:%.6g" % (j + 1, s))
            out.write(" ".join(toks) + "\n")


if __name__ == "__main__":
    main(sys.argv[1], sys.argv[2], sys.argv[3])

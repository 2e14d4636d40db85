/* Elementwise GRU gate kernels used by _scan.pyx.
 *
 * Kept in plain C with restrict pointers so the compiler can vectorize the
 * inner loops (and, under -ffast-math, call the SIMD exp from libmvec).
 * Gate buffers `a` / `da` are row-major (B, 3H) in z, r, h order; all other
 * buffers are row-major (B, H).
 */
#ifndef RDIS_GATES_H
#define RDIS_GATES_H

#include <math.h>

static inline double rdis_sigm(double v)
{
    v = fmin(fmax(v, -500.0), 500.0);
    return 1.0 / (1.0 + exp(-v));
}

/* z, r = sigmoid(a[:, :2H] + b[:2H]); rh = r * h */
static inline void rdis_gates_zr(int B, int H, const double *restrict a,
                                 const double *restrict b,
                                 const double *restrict h, double *restrict z,
                                 double *restrict r, double *restrict rh)
{
    for (int i = 0; i < B; i++) {
        const double *ai = a + (long)i * 3 * H;
        const double *hi = h + (long)i * H;
        double *zi = z + (long)i * H;
        double *ri = r + (long)i * H;
        double *rhi = rh + (long)i * H;
        for (int j = 0; j < H; j++) {
            double rv = rdis_sigm(ai[H + j] + b[H + j]);
            zi[j] = rdis_sigm(ai[j] + b[j]);
            ri[j] = rv;
            rhi[j] = rv * hi[j];
        }
    }
}

/* c = tanh(a[:, 2H:] + b[2H:]); hnext = h + z * (c - h) */
static inline void rdis_gates_c(int B, int H, const double *restrict a,
                                const double *restrict b,
                                const double *restrict z,
                                const double *restrict h, double *restrict c,
                                double *restrict hnext)
{
    for (int i = 0; i < B; i++) {
        const double *ai = a + (long)i * 3 * H + 2 * H;
        const double *zi = z + (long)i * H;
        const double *hi = h + (long)i * H;
        double *ci = c + (long)i * H;
        double *hn = hnext + (long)i * H;
        for (int j = 0; j < H; j++) {
            double cv = 2.0 * rdis_sigm(2.0 * (ai[j] + b[2 * H + j])) - 1.0;
            ci[j] = cv;
            hn[j] = hi[j] + zi[j] * (cv - hi[j]);
        }
    }
}

/* first half of the step backward: da_z, da_c and the direct dh_prev term */
static inline void rdis_back_zc(int B, int H, const double *restrict dh,
                                const double *restrict hp,
                                const double *restrict z,
                                const double *restrict c, double *restrict da,
                                double *restrict dhp)
{
    for (int i = 0; i < B; i++) {
        const double *g = dh + (long)i * H;
        const double *hpi = hp + (long)i * H;
        const double *zi = z + (long)i * H;
        const double *ci = c + (long)i * H;
        double *dai = da + (long)i * 3 * H;
        double *dhpi = dhp + (long)i * H;
        for (int j = 0; j < H; j++) {
            double zv = zi[j], cv = ci[j];
            dai[2 * H + j] = g[j] * zv * (1.0 - cv * cv);
            dai[j] = g[j] * (cv - hpi[j]) * zv * (1.0 - zv);
            dhpi[j] = g[j] - g[j] * zv;
        }
    }
}

/* second half: da_r from drh, rh cache, dh_prev += drh * r + gh */
static inline void rdis_back_r(int B, int H, const double *restrict drh,
                               const double *restrict hp,
                               const double *restrict r,
                               const double *restrict gh,
                               double *restrict da, double *restrict rh,
                               double *restrict dhp)
{
    for (int i = 0; i < B; i++) {
        const double *d = drh + (long)i * H;
        const double *hpi = hp + (long)i * H;
        const double *ri = r + (long)i * H;
        const double *ghi = gh + (long)i * H;
        double *dai = da + (long)i * 3 * H + H;
        double *rhi = rh + (long)i * H;
        double *dhpi = dhp + (long)i * H;
        for (int j = 0; j < H; j++) {
            double rv = ri[j];
            dai[j] = d[j] * hpi[j] * rv * (1.0 - rv);
            rhi[j] = rv * hpi[j];
            dhpi[j] += d[j] * rv + ghi[j];
        }
    }
}

/* Small-D products, done inline because a BLAS call costs more than the work
 * when D is a handful of features.
 *
 * y = h @ Wo + bo; u = m * x (+ (1 - m) * y when filling); a = u @ W
 * WoT is Wo transposed, (D, H); W is (D, 3H); a is (B, 3H).
 */
static inline void rdis_head_fill(int B, int H, int D, int fill,
                                  const double *restrict h,
                                  const double *restrict WoT,
                                  const double *restrict bo,
                                  const double *restrict x,
                                  const double *restrict m,
                                  const double *restrict W, double *restrict y,
                                  double *restrict u, double *restrict a)
{
    const int H3 = 3 * H;
    for (int i = 0; i < B; i++) {
        const double *hi = h + (long)i * H;
        double *yi = y + (long)i * D;
        double *ui = u + (long)i * D;
        double *ai = a + (long)i * H3;
        for (int j = 0; j < D; j++) {
            const double *wj = WoT + (long)j * H;
            double s = 0.0;
            for (int k = 0; k < H; k++)
                s += hi[k] * wj[k];
            yi[j] = bo[j] + s;
        }
        for (int j = 0; j < D; j++) {
            double mv = m[(long)i * D + j];
            double v = mv * x[(long)i * D + j];
            if (fill)
                v += (1.0 - mv) * yi[j];
            ui[j] = v;
        }
        for (int k = 0; k < H3; k++)
            ai[k] = 0.0;
        for (int j = 0; j < D; j++) {
            const double uj = ui[j];
            const double *wj = W + (long)j * H3;
            for (int k = 0; k < H3; k++)
                ai[k] += uj * wj[k];
        }
    }
}

/* dy = gy (+ (1 - m) * (da @ W^T) when filling); dhp += dy @ Wo^T
 * WoT is Wo transposed, (D, H). */
static inline void rdis_back_head(int B, int H, int D, int fill,
                                  const double *restrict da,
                                  const double *restrict W,
                                  const double *restrict gy,
                                  const double *restrict m,
                                  const double *restrict WoT,
                                  double *restrict dy, double *restrict dhp)
{
    const int H3 = 3 * H;
    for (int i = 0; i < B; i++) {
        const double *dai = da + (long)i * H3;
        double *dyi = dy + (long)i * D;
        double *dhpi = dhp + (long)i * H;
        for (int j = 0; j < D; j++) {
            double v = gy[(long)i * D + j];
            if (fill) {
                const double *wj = W + (long)j * H3;
                double s = 0.0;
                for (int k = 0; k < H3; k++)
                    s += dai[k] * wj[k];
                v += (1.0 - m[(long)i * D + j]) * s;
            }
            dyi[j] = v;
        }
        for (int j = 0; j < D; j++) {
            const double *wj = WoT + (long)j * H;
            const double g = dyi[j];
            for (int k = 0; k < H; k++)
                dhpi[k] += g * wj[k];
        }
    }
}

/* out[j] += sum_i a[i, j] for a row-major (n, k) block */
static inline void rdis_colsum(int n, int k, const double *restrict a,
                               double *restrict out)
{
    for (int i = 0; i < n; i++) {
        const double *ai = a + (long)i * k;
        for (int j = 0; j < k; j++)
            out[j] += ai[j];
    }
}

#endif

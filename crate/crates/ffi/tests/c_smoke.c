#include <math.h>
#include <stdio.h>
#include "tlu.h"

static int fails = 0;
#define CHECK(c) do { if (!(c)) { printf("FAIL line %d: %s\n", __LINE__, #c); fails++; } } while (0)

int main(void) {
    double v = -1.0;
    CHECK(tlu_kl_gauss_gauss(0.0, 1.0, 1.0, 1.0, &v) == TLU_STATUS_OK);
    CHECK(fabs(v - 0.5) < 1e-15);
    CHECK(tlu_kl_t_gauss(2.0, 0.0, 1.0, 0.0, 1.0, &v) == TLU_STATUS_DOMAIN);
    CHECK(tlu_last_error() != NULL);
    CHECK(tlu_kl_t_gauss(6.0, 0.0, 1.0, 0.0, 1.0, NULL) == TLU_STATUS_NULL_POINTER);

    double ann[] = {0.1, 0.2, 0.3, -0.1, 0.0, 0.1};
    TluLabelDistribution *ld = NULL;
    CHECK(tlu_label_distribution_from_annotations(ann, 2, 3, &ld) == TLU_STATUS_OK);
    CHECK(tlu_label_distribution_len(ld) == 2);
    double nu, m[2], s[2];
    CHECK(tlu_label_distribution_get(ld, &nu, m, s, 2) == TLU_STATUS_OK);
    CHECK(nu == 3.0 && fabs(m[0] - 0.2) < 1e-15 && fabs(s[1] - 0.1) < 1e-15);
    tlu_label_distribution_free(ld);

    size_t dims[] = {2, 4, 1};
    TluNetwork *net = NULL;
    CHECK(tlu_network_new(dims, 3, 1.0, 7, &net) == TLU_STATUS_OK);
    CHECK(tlu_network_input_dim(net) == 2);
    double x[] = {0.1, 0.2, 0.3, 0.4, 0.5, 0.6};
    double mu[3], sd[3];
    CHECK(tlu_network_predict(net, x, 3, 2, 30, 1, mu, sd) == TLU_STATUS_OK);
    CHECK(isfinite(mu[2]) && sd[2] > 0.0);
    CHECK(tlu_network_predict(net, x, 2, 3, 30, 1, mu, sd) == TLU_STATUS_SHAPE_MISMATCH);
    tlu_network_free(net);

    if (fails == 0) printf("ok\n");
    return fails != 0;
}

#include <stdio.h>
#include <stdlib.h>
#include "lucbrank.h"

/* Drives an engine on fixed Bernoulli means with a tiny LCG. */
static unsigned long long state = 42;
static double draw(double p) {
    state = state * 6364136223846793005ULL + 1442695040888963407ULL;
    return ((state >> 11) * (1.0 / 9007199254740992.0)) < p ? 1.0 : 0.0;
}

int main(void) {
    const double means[4] = {0.9, 0.1, 0.8, 0.2};
    const size_t boundaries[1] = {2};
    double first[4];
    for (int i = 0; i < 4; i++) first[i] = draw(means[i]);

    LucbEngine *e = NULL;
    if (lucb_engine_new(boundaries, 1, 0.0, 0.1, first, 4, &e) != LUCB_STATUS_OK) {
        fprintf(stderr, "new: %s\n", lucb_last_error_message());
        return 1;
    }
    size_t arms[8], len = 0;
    bool done = false;
    while (lucb_engine_is_done(e, &done) == LUCB_STATUS_OK && !done) {
        if (lucb_engine_round_requests(e, arms, NULL, 8, &len) != LUCB_STATUS_OK) return 2;
        double rewards[8];
        for (size_t i = 0; i < len; i++) rewards[i] = draw(means[arms[i]]);
        if (lucb_engine_apply_round(e, rewards, len) != LUCB_STATUS_OK) return 3;
    }
    size_t labels[4];
    if (lucb_engine_cluster_labels(e, labels, 4) != LUCB_STATUS_OK) return 4;
    uint64_t total = 0;
    lucb_engine_total_samples(e, &total);
    printf("%zu %zu %zu %zu %llu\n", labels[0], labels[1], labels[2], labels[3], (unsigned long long)total);

    double kl = 0.0;
    if (lucb_kl_bernoulli(0.5, 1.0, &kl) != LUCB_STATUS_DOMAIN) return 5;
    lucb_engine_free(e);
    return 0;
}

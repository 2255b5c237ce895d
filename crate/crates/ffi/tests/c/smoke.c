#include <math.h>
#include <stdio.h>
#include "hamreach.h"

int main(void) {
    HrModel *model = NULL;
    if (hr_model_new("double-pendulum-linear", &model) != HR_STATUS_OK) return 10;
    double sigma[16];
    if (hr_lyapunov(model, sigma, 16) != HR_STATUS_OK) return 11;
    if (fabs(sigma[10] - 5.0) > 1e-10) return 12;
    HrDomain *d2 = NULL;
    if (hr_domain_new(model, "D2", &d2) != HR_STATUS_OK) return 13;
    double value, argmin[4];
    if (hr_boundary_infimum(model, d2, 0, &value, argmin, 4) != HR_STATUS_OK) return 14;
    if (fabs(value - 0.857233) > 1e-6) return 15;
    HrModel *bad = NULL;
    if (hr_model_new("nope", &bad) != HR_STATUS_INVALID_ARGUMENT || hr_last_error() == NULL) return 16;
    printf("%s %.7f\n", hr_version(), value);
    hr_domain_free(d2);
    hr_model_free(model);
    return 0;
}

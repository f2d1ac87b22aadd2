#include <stdio.h>
#include <string.h>
#include "qacq.h"

#define CHECK(call)                                                        \
    do {                                                                   \
        QacqStatus s_ = (call);                                            \
        if (s_ != QACQ_STATUS_OK) {                                        \
            char msg[256];                                                 \
            qacq_last_error_message(msg, sizeof msg);                      \
            fprintf(stderr, "%s failed (%d): %s\n", #call, (int)s_, msg);  \
            return 1;                                                      \
        }                                                                  \
    } while (0)

int main(void) {
    double x[] = {0.1, 0.2, 0.5, 0.5, 0.9, 0.7};
    double y[] = {0.3, 1.0, -0.4};
    double ls[] = {0.3, 0.3};
    QacqModel *model = NULL;
    CHECK(qacq_model_new(x, 3, 2, y, ls, 1.0, 1e-4, 0.0, &model));

    QacqAcquisition *ei = NULL;
    CHECK(qacq_acquisition_new(QACQ_ACQ_KIND_EI, 1.0, 2.0, 0.05, 256, &ei));
    double batch[] = {0.45, 0.55, 0.6, 0.4};
    double value, se, grad[4];
    CHECK(qacq_acquisition_evaluate(ei, model, batch, 2, 7, &value, &se, grad));

    double picked[4], picked_value;
    CHECK(qacq_select(ei, model, 2, QACQ_SELECTION_GREEDY, 256, 3, picked, &picked_value));

    QacqTask *task = NULL;
    CHECK(qacq_task_new("branin", 2, 0, &task));
    double f, opt;
    CHECK(qacq_task_evaluate(task, picked, &f));
    CHECK(qacq_task_optimum(task, &opt));

    if (qacq_model_new(x, 3, 2, NULL, ls, 1.0, 1e-4, 0.0, &model) != QACQ_STATUS_NULL_POINTER) return 2;
    char msg[64];
    if (qacq_last_error_message(msg, sizeof msg) == 0 || strstr(msg, "outputs") == NULL) return 3;

    printf("ok %s value=%.6f se=%.2e picked=%.6f f=%.4f opt=%.4f\n", qacq_version(), value, se, picked_value, f, opt);
    qacq_task_free(task);
    qacq_acquisition_free(ei);
    qacq_model_free(model);
    return value > 0.0 && se >= 0.0 && f <= opt + 1e-9 ? 0 : 4;
}

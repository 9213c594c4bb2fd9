// Trains the linear probe on a 1-shot synthetic task and prints query mIoU.

#include <iostream>

#include "fss.hpp"

int main(int argc, char** argv) {
    using namespace fss;
    const std::uint64_t seed = argc > 1 ? std::stoull(argv[1]) : 0;

    const Dataset ds = synth_blobs(synthetic_preset());
    const FewShotTask task = make_task(ds, TaskRequest{1, seed});
    std::cout << "support:";
    for (const auto& s : task.support) std::cout << ' ' << s.image_id;
    std::cout << "\nquery: " << task.query.size() << " images\n";

    auto model = make_model<float>(std::make_unique<TinyEncoder<float>>(tiny_preset()), Method::Linear,
                                   task.catalog, seed);
    const TrainConfig cfg = synthetic_train_preset(Method::Linear, seed);
    const StageResult s1 = train_stage1(model, task, cfg);
    std::cout << fmt::format("support loss {:.4f} -> {:.4f} over {} steps\n", s1.initial_support_loss,
                             s1.final_support_loss, s1.steps);

    const QueryEvaluation ev = evaluate_query(model, task);
    const MiouResult m = miou_detail(ev.confusion);
    for (std::size_t i = 0; i < task.catalog.size(); ++i)
        std::cout << fmt::format("  {:<12} {}\n", task.catalog.classes()[i].name,
                                 m.per_class[i] ? fmt::format("{:.4f}", *m.per_class[i]) : "n/a");
    std::cout << fmt::format("query mIoU {:.4f}\n", m.miou);
}

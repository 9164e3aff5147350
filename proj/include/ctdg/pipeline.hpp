#ifndef CTDG_PIPELINE_HPP
#define CTDG_PIPELINE_HPP

#include <memory>
#include <string>

#include "ctdg/config.hpp"
#include "ctdg/learn.hpp"
#include "ctdg/spectral.hpp"

namespace ctdg {

// Everything a run needs, wired from a RunConfig: dataset, clusters,
// encoder configuration and the task model over one parameter store.
struct Pipeline {
    RunConfig cfg;
    std::shared_ptr<const DynamicGraph> graph;
    ClusterModel clusters;
    EncoderConfig enc;
    ParamStore store;

    std::unique_ptr<LinkDataset> link_data;
    std::unique_ptr<LinkTask> link;
    std::unique_ptr<NodeDataset> node_data;
    std::unique_ptr<NodeTask> node;
    std::unique_ptr<TrafficDataset> traffic_data;
    std::unique_ptr<TrafficTask> traffic;

    TaskModel& model();
};

std::unique_ptr<Pipeline> build_pipeline(const RunConfig& cfg);

// Copies checkpoint tensors into the pipeline's freshly initialized store;
// names and shapes must match (task/config compatibility check).
void load_checkpoint_into(Pipeline& pipe, const Checkpoint& ckpt);

// Labels CSV for the node task: header `node,label,t`.
void load_node_labels(const std::string& path, NodeId n_nodes, std::vector<int>* labels,
                      std::vector<double>* label_times, int* classes);

// Graph the interpretation signals live on: item co-purchase projection for
// the link task, the accumulated event graph for node, roads for traffic.
std::vector<std::pair<NodeId, NodeId>> interpretation_edges(const Pipeline& pipe);

}  // namespace ctdg

#endif  // CTDG_PIPELINE_HPP

#pragma once

#include <map>
#include <string>
#include <vector>

#include "diffplan/sim.hpp"

namespace diffplan {

// Closed-loop sub-scores feeding the composite planner metric.
struct SubScores {
    double nc = 1.0;       // no-at-fault-collision tier: 0, 0.5, 1
    double dac = 1.0;      // drivable-area compliance: 0 or 1
    double ttc = 1.0;      // time-to-collision clearance: 0 or 1
    double comfort = 1.0;  // [0,1]
    double ep = 1.0;       // ego progress ratio, [0,1]

    void validate() const;
};

double pdms(const SubScores& sub);

struct InfractionLedger {
    std::map<InfractionKind, int> counts;

    void add(InfractionKind kind, int n = 1);
    void validate() const;
};

double infraction_penalty(InfractionKind kind);
double infraction_score(const InfractionLedger& ledger);
double route_completion(double traveled_m, double total_m);
double driving_score(double rc_percent, double is);

struct EpisodeScore {
    int scenario_id = 0;
    double rc = 0.0;    // percent
    double is = 1.0;
    double ds = 0.0;
    double pdms = 0.0;
    SubScores sub;
};

double score_nc(const EpisodeTrace& trace);
double score_dac(const EpisodeTrace& trace);
double score_ttc(const EpisodeTrace& trace, double horizon_s = 4.0, double threshold_s = 2.0);
double score_comfort(const EpisodeTrace& trace);
double score_ep(double actual_progress_m, double reference_progress_m);

InfractionLedger ledger_from_trace(const EpisodeTrace& trace);
EpisodeScore score_episode(const EpisodeTrace& trace, double reference_progress_m);

// One JSON record per episode plus aggregate means.
std::string score_report(const std::vector<EpisodeScore>& scores);

}  // namespace diffplan

#pragma once

#include <stdexcept>
#include <string>

namespace emslab {

/// Error classes. The CLI maps each class onto a distinct exit code.
enum class ErrorKind {
    parse = 2,
    validation = 3,
    missing_artifact = 4,
    infeasible = 5,
    provenance = 6,
};

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

#define EMSLAB_DEFINE_ERROR(Name, Kind)                                   \
    class Name : public Error {                                           \
    public:                                                               \
        explicit Name(const std::string& what) : Error(Kind, what) {}     \
    }

// powertrain
EMSLAB_DEFINE_ERROR(PowerLimitExceeded, ErrorKind::infeasible);
EMSLAB_DEFINE_ERROR(NoFeasibleInput, ErrorKind::infeasible);
// trip
EMSLAB_DEFINE_ERROR(ParseError, ErrorKind::parse);
EMSLAB_DEFINE_ERROR(SchemaError, ErrorKind::parse);
EMSLAB_DEFINE_ERROR(ValidationError, ErrorKind::validation);
EMSLAB_DEFINE_ERROR(SpecError, ErrorKind::validation);
EMSLAB_DEFINE_ERROR(RouteMismatch, ErrorKind::validation);
// dp
EMSLAB_DEFINE_ERROR(InfeasibleTrip, ErrorKind::infeasible);
// learn
EMSLAB_DEFINE_ERROR(UnknownTrip, ErrorKind::validation);
EMSLAB_DEFINE_ERROR(CorpusTooSmall, ErrorKind::validation);
EMSLAB_DEFINE_ERROR(DegenerateBin, ErrorKind::validation);
EMSLAB_DEFINE_ERROR(BinOutOfRange, ErrorKind::validation);
// baselines / sim
EMSLAB_DEFINE_ERROR(EmptyCorpus, ErrorKind::validation);
EMSLAB_DEFINE_ERROR(ZeroDistance, ErrorKind::validation);
EMSLAB_DEFINE_ERROR(MissingArtifacts, ErrorKind::missing_artifact);
EMSLAB_DEFINE_ERROR(ProvenanceConflict, ErrorKind::provenance);

#undef EMSLAB_DEFINE_ERROR

}  // namespace emslab

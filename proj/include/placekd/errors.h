#pragma once

#include <stdexcept>
#include <string>

namespace placekd {

// Base for every error raised by the library. The CLI maps the concrete type
// to a short category name in its structured error output.
class Error : public std::runtime_error {
 public:
  Error(std::string category, const std::string& what)
      : std::runtime_error(what), category_(std::move(category)) {}
  const std::string& category() const { return category_; }

 private:
  std::string category_;
};

#define PLACEKD_DEFINE_ERROR(Name, category)                          \
  class Name : public Error {                                         \
   public:                                                            \
    explicit Name(const std::string& what) : Error(category, what) {} \
  };

PLACEKD_DEFINE_ERROR(SchemaError, "schema")
PLACEKD_DEFINE_ERROR(LoadError, "load")
PLACEKD_DEFINE_ERROR(ConfigError, "config")
PLACEKD_DEFINE_ERROR(EncodeError, "encode")
PLACEKD_DEFINE_ERROR(ModelError, "model")
PLACEKD_DEFINE_ERROR(DataError, "data")
PLACEKD_DEFINE_ERROR(LossError, "loss")
PLACEKD_DEFINE_ERROR(TrainingError, "training")
PLACEKD_DEFINE_ERROR(QueryError, "query")
PLACEKD_DEFINE_ERROR(FormatError, "format")
PLACEKD_DEFINE_ERROR(ProvenanceError, "provenance")
PLACEKD_DEFINE_ERROR(EvaluationError, "evaluation")
PLACEKD_DEFINE_ERROR(UsageError, "usage")
PLACEKD_DEFINE_ERROR(IoError, "io")

#undef PLACEKD_DEFINE_ERROR

}  // namespace placekd

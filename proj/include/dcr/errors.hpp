#pragma once

#include <stdexcept>
#include <string>

namespace dcr {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class DataError : public Error {
 public:
  using Error::Error;
};

class TemplateError : public Error {
 public:
  using Error::Error;
};

class ParseError : public Error {
 public:
  using Error::Error;
};

class BackendError : public Error {
 public:
  using Error::Error;
};

class BackendUnavailable : public BackendError {
 public:
  using BackendError::BackendError;
};

class RequestRejected : public BackendError {
 public:
  RequestRejected(int status, const std::string& body)
      : BackendError("request rejected: HTTP " + std::to_string(status) + ": " + body),
        status_(status),
        body_(body) {}
  int status() const { return status_; }
  const std::string& body() const { return body_; }

 private:
  int status_;
  std::string body_;
};

class EmptyCompletion : public BackendError {
 public:
  EmptyCompletion() : BackendError("empty completion") {}
};

// Pipeline failure tagged with the stage (and sentence index when relevant).
class StageError : public Error {
 public:
  StageError(std::string stage, int sentence_index, const std::string& message)
      : Error(stage + (sentence_index >= 0 ? " failed at sentence " + std::to_string(sentence_index)
                                           : std::string(" failed")) +
              ": " + message),
        stage_(std::move(stage)),
        sentence_index_(sentence_index) {}
  const std::string& stage() const { return stage_; }
  int sentence_index() const { return sentence_index_; }

 private:
  std::string stage_;
  int sentence_index_;
};

}  // namespace dcr

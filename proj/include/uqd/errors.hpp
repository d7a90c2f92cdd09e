// Copyright 2026 The uqd Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <stdexcept>
#include <string>

namespace uqd {

// Root of every error thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed record, bundle, or configuration.
class ValidationError : public Error {
 public:
  using Error::Error;
};

// Network-level failure talking to a backend or judge. Retry-eligible.
class TransportError : public Error {
 public:
  using Error::Error;
};

// Non-retryable HTTP status (4xx other than 429). Carries the response body.
class HttpError : public Error {
 public:
  HttpError(int status, std::string body)
      : Error("HTTP " + std::to_string(status) + ": " + body),
        status_(status),
        body_(std::move(body)) {}

  int status() const noexcept { return status_; }
  const std::string& body() const noexcept { return body_; }

 private:
  int status_;
  std::string body_;
};

// A peer answered, but the answer could not be understood.
class ProtocolError : public Error {
 public:
  using Error::Error;
};

// Policy or request the backend cannot serve (e.g. beam over chat-completions).
class UnsupportedPolicyError : public Error {
 public:
  using Error::Error;
};

class NotRecordedError : public Error {
 public:
  using Error::Error;
};

class IntegrityError : public Error {
 public:
  using Error::Error;
};

class MissingLogprobsError : public Error {
 public:
  using Error::Error;
};

// Paraphrase output that no scanning strategy could parse. Keeps the raw text.
class ParaphraseParseError : public Error {
 public:
  explicit ParaphraseParseError(std::string raw)
      : Error("could not parse paraphrase output: " + raw), raw_(std::move(raw)) {}
  const std::string& raw() const noexcept { return raw_; }

 private:
  std::string raw_;
};

class InsufficientParaphrasesError : public Error {
 public:
  InsufficientParaphrasesError(std::size_t wanted, std::size_t got)
      : Error("insufficient paraphrases: wanted " + std::to_string(wanted) +
              ", parsed " + std::to_string(got)),
        wanted_(wanted),
        got_(got) {}
  std::size_t wanted() const noexcept { return wanted_; }
  std::size_t got() const noexcept { return got_; }

 private:
  std::size_t wanted_;
  std::size_t got_;
};

class UndefinedAurocError : public Error {
 public:
  using Error::Error;
};

class DegenerateQuantileError : public Error {
 public:
  DegenerateQuantileError(std::string axis, std::string what)
      : Error("degenerate quantiles on axis '" + axis + "': " + what), axis_(std::move(axis)) {}
  const std::string& axis() const noexcept { return axis_; }

 private:
  std::string axis_;
};

class EmptyReportError : public Error {
 public:
  using Error::Error;
};

}  // namespace uqd

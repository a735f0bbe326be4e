#include <doctest.h>

#include <algorithm>
#include <sstream>

#include "couda/selfcheck.hpp"

namespace {

const couda::GradcheckComponent* find(const std::vector<couda::GradcheckComponent>& all, const std::string& name) {
  auto it = std::find_if(all.begin(), all.end(), [&](const auto& c) { return c.name == name; });
  return it == all.end() ? nullptr : &*it;
}

}  // namespace

TEST_CASE("suite covers ops, loss terms, the noise path and the full objective") {
  couda::GradcheckOptions opt;
  opt.instances = 10;
  const auto all = couda::run_gradcheck_suite(opt);
  for (const char* name : {"op matmul", "op softmax_rowwise", "op log", "op cosine_similarity_rowwise", "L^c",
                           "L^adv", "L^dis", "L^adv (discriminator)", "Z path", "full objective"}) {
    CAPTURE(name);
    const auto* c = find(all, name);
    REQUIRE(c != nullptr);
    CHECK(c->instances == 10);
  }
  for (const auto& c : all) {
    CAPTURE(c.name);
    CHECK(c.passed);
    CHECK(c.max_relative_error <= 1e-4);
  }
}

TEST_CASE("suite is reproducible for a seed") {
  couda::GradcheckOptions opt;
  opt.instances = 3;
  opt.seed = 5;
  const auto a = couda::run_gradcheck_suite(opt);
  const auto b = couda::run_gradcheck_suite(opt);
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i].max_relative_error == b[i].max_relative_error);
}

TEST_CASE("a corrupted gradient is caught") {
  for (const char* name : {"L^adv", "full objective", "op relu"}) {
    CAPTURE(name);
    couda::GradcheckOptions opt;
    opt.instances = 3;
    opt.corrupt_component = name;
    std::ostringstream out;
    CHECK(couda::cmd_gradcheck(opt, out) == 1);
    CHECK(out.str().find("gradient check failed") != std::string::npos);
    const auto all = couda::run_gradcheck_suite(opt);
    CHECK_FALSE(find(all, name)->passed);
    CHECK(std::count_if(all.begin(), all.end(), [](const auto& c) { return !c.passed; }) == 1);
  }
}

TEST_CASE("clean run reports success") {
  couda::GradcheckOptions opt;
  opt.instances = 2;
  std::ostringstream out;
  CHECK(couda::cmd_gradcheck(opt, out) == 0);
  CHECK(out.str().find("FAIL") == std::string::npos);
}

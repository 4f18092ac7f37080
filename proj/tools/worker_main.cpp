#include <iostream>

#include "elastic_group/errors.hpp"
#include "elastic_group/worker.hpp"

int main() {
  try {
    return eg::worker_main();
  } catch (const eg::Error& e) {
    std::cerr << "eg_worker: " << e.what() << "\n";
    return 1;
  }
}

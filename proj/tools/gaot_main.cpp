#include "pipelines.hpp"

int main(int argc, char** argv) { return gaot::cli::run(argc, argv); }

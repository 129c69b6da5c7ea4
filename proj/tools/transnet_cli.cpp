#include "transnet/cli/app.hpp"

int main(int argc, char** argv) { return transnet::cli::run(argc, argv); }

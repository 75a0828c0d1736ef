#include "postshock/io.hpp"

int main(int argc, char** argv) { return postshock::run_cli(argc, argv); }

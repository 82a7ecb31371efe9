# Utils: config, artifact store, run monitor, console reports

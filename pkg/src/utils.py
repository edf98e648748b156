import logging


class EntailmentLogger:
    LOG_LVLs = {
        'i': logging.INFO,
        'd': logging.DEBUG,
        'e': logging.ERROR,
        'w': logging.WARN
    }

    def __init__(self, logger_file=None, logger_level='i'):
        self.lf = logger_file
        self.lvl = logger_level

    def _create_logger(self, logger_name=""):
        logger = logging.getLogger(logger_name)
        formatter = logging.Formatter("%(asctime)s - %(name)s - %(levelname)s - %(message)s",
                                      datefmt="%Y-%m-%d %H:%M:%S")
        logger.setLevel(self.LOG_LVLs[self.lvl])
        # the factory is called from several modules; one handler per destination
        for handler in list(logger.handlers):
            if getattr(handler, "_entailment_handler", False):
                logger.removeHandler(handler)
                handler.close()
        if self.lf:
            handler = logging.FileHandler(self.lf, encoding="utf-8")
        else:
            handler = logging.StreamHandler()
        handler.setFormatter(formatter)
        handler.setLevel(self.LOG_LVLs[self.lvl])
        handler._entailment_handler = True
        logger.addHandler(handler)

        return logger

    def get_logger(self):
        return self._create_logger("Graded_Lexical_Entailment")


def calc(tp, tp_fp, tp_fn):
    """precision, recall and f1 from raw counts; f1 is exactly 2PR/(P+R) or 0"""
    if tp_fp != 0:
        pre = tp / tp_fp
    else:
        pre = 0.0

    if tp_fn == 0:
        rec = 0.0
    else:
        rec = tp / tp_fn

    if pre + rec == 0:
        f1 = 0.0
    else:
        f1 = 2 * pre * rec / (pre + rec)

    return pre, rec, f1
